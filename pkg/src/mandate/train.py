"""Training with early stopping and split evaluation."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .metrics import MetricsReport
from .model import MandateModel, ModelInputs, class_weights, trainable

log = logging.getLogger(__name__)

MONITORS = ("auc", "f1_macro", "gmean")


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss; ``model`` holds the last finite best checkpoint."""

    def __init__(self, epoch: int, model: MandateModel, history):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
        self.model = model
        self.history = history


@dataclass
class TrainConfig:
    epochs: int = 200
    patience: int = 20
    lr: float = 5e-3
    batch_size: int = 2048
    seed: int = 0
    monitor: str = "auc"

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.monitor not in MONITORS:
            raise ValueError(f"monitor must be one of {MONITORS}")


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    wall_time: float = 0.0

    @property
    def last_epoch(self) -> int:
        return self.records[-1]["epoch"] if self.records else 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["epoch", "train_loss", "val_auc", "val_f1_macro", "val_gmean"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for rec in self.records:
            w.writerow([rec["epoch"]] + [repr(float(rec[c])) for c in cols[1:]])
        return buf.getvalue()


class EarlyStopper:
    """Tracks the best monitored value; signals a stop after ``patience`` epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0

    def update(self, epoch: int, value: float) -> bool:
        if value > self.best:
            self.best, self.best_epoch = value, epoch
            return False
        return epoch - self.best_epoch >= self.patience


def inference_batches(num_nodes: int, batch_size: int, seed: int) -> list:
    """Fixed node batches for attention at inference; one batch when everything fits."""
    if num_nodes <= batch_size:
        return [np.arange(num_nodes)]
    order = np.random.default_rng(seed).permutation(num_nodes)
    return [np.sort(order[i:i + batch_size]) for i in range(0, num_nodes, batch_size)]


def training_batches(rng, num_nodes: int, batch_size: int) -> list:
    if num_nodes <= batch_size:
        return [np.arange(num_nodes)]
    order = rng.permutation(num_nodes)
    return [np.sort(order[i:i + batch_size]) for i in range(0, num_nodes, batch_size)]


def evaluate(model: MandateModel, inputs: ModelInputs, labels, nodes, split_name: str, batch_size: int, seed: int = 0,
             scores=None) -> MetricsReport:
    """Metrics on ``nodes``; pass precomputed ``scores`` to skip inference."""
    nodes = np.asarray(nodes)
    if nodes.size == 0:
        raise ValueError(f"split {split_name!r} is empty")
    if scores is None:
        model.check_inputs(inputs)
        scores = model.predict_proba(inputs, inference_batches(inputs.num_nodes, batch_size, seed))
    return MetricsReport.from_scores(split_name, scores[nodes], np.asarray(labels)[nodes])


def train(model: MandateModel, inputs: ModelInputs, labels, split, cfg: TrainConfig, epoch_callback=None):
    """Adam on the total loss with early stopping; returns (best model, history)."""
    model.check_inputs(inputs)
    labels = np.asarray(labels)
    train_mask = np.zeros(inputs.num_nodes, dtype=bool)
    train_mask[split.train] = True
    for c in (0, 1):
        if not np.any(labels[split.train] == c):
            raise ValueError(f"training split has no node of class {c}")
    weights = class_weights(labels[split.train])
    params = trainable(model.params)
    state = ad.AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    eval_batches = inference_batches(inputs.num_nodes, cfg.batch_size, cfg.seed)
    stopper = EarlyStopper(cfg.patience)
    history = TrainHistory()
    best = model.snapshot()
    start = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        losses, sizes = [], []
        for batch in training_batches(rng, inputs.num_nodes, cfg.batch_size):
            mask = train_mask[batch]
            if not mask.any():
                continue
            for p in params.values():
                p.zero_grad()
            loss, _ = model.loss(inputs, labels, batch, mask, weights)
            if not np.isfinite(loss.data):
                model.restore(best)
                history.wall_time = time.perf_counter() - start
                raise DivergenceError(epoch, model, history)
            ad.backward(loss)
            try:
                ad.adam_step(params, state)
            except ad.NonFiniteGradientError:
                model.restore(best)
                history.wall_time = time.perf_counter() - start
                raise DivergenceError(epoch, model, history) from None
            losses.append(float(loss.data))
            sizes.append(int(mask.sum()))

        scores = model.predict_proba(inputs, eval_batches)
        val = evaluate(model, inputs, labels, split.val, "val", cfg.batch_size, scores=scores)
        rec = {
            "epoch": epoch,
            "train_loss": float(np.average(losses, weights=sizes)),
            "val_auc": val.auc,
            "val_f1_macro": val.f1_macro,
            "val_gmean": val.gmean,
        }
        history.records.append(rec)
        log.debug("epoch %d loss %.5f val auc %.4f", epoch, rec["train_loss"], val.auc)
        improved_before = stopper.best_epoch
        stop = stopper.update(epoch, getattr(val, cfg.monitor))
        if stopper.best_epoch != improved_before:
            best = model.snapshot()
        if epoch_callback is not None:
            epoch_callback(rec)
        if stop:
            break

    model.restore(best)
    history.best_epoch = stopper.best_epoch
    history.wall_time = time.perf_counter() - start
    return model, history
