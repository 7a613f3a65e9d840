"""Fraud-detection metrics: rank-sum AUC, macro F1, G-mean."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_predictions(cls, pred, labels) -> "Confusion":
        pred = np.asarray(pred).astype(bool)
        labels = np.asarray(labels).astype(bool)
        return cls(
            int(np.sum(pred & labels)),
            int(np.sum(pred & ~labels)),
            int(np.sum(~pred & ~labels)),
            int(np.sum(~pred & labels)),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _binary(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0/1")
    return labels.astype(np.int64)


def auc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative), ties counted 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _binary(labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1_macro(pred, labels) -> float:
    pred, labels = _binary(pred), _binary(labels)
    if labels.size == 0:
        raise ValueError("f1_macro of empty input")
    if pred.shape != labels.shape:
        raise ValueError("pred and labels differ in length")
    scores = []
    for c in (0, 1):
        tp = np.sum((pred == c) & (labels == c))
        fp = np.sum((pred == c) & (labels != c))
        fn = np.sum((pred != c) & (labels == c))
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def gmean(confusion: Confusion) -> float:
    pos = confusion.tp + confusion.fn
    neg = confusion.tn + confusion.fp
    if pos == 0 or neg == 0:
        raise ValueError("gmean needs both classes present in labels")
    return float(np.sqrt((confusion.tp / pos) * (confusion.tn / neg)))


@dataclass(frozen=True)
class MetricsReport:
    split: str
    auc: float
    f1_macro: float
    gmean: float
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_scores(cls, split: str, scores, labels, threshold: float = 0.5) -> "MetricsReport":
        scores = np.asarray(scores, dtype=np.float64)
        labels = _binary(labels)
        if labels.size == 0:
            raise ValueError(f"split {split!r} is empty")
        pred = (scores >= threshold).astype(np.int64)
        conf = Confusion.from_predictions(pred, labels)
        return cls(split, auc(scores, labels), f1_macro(pred, labels), gmean(conf), conf.tp, conf.fp, conf.tn, conf.fn)

    @property
    def confusion(self) -> Confusion:
        return Confusion(self.tp, self.fp, self.tn, self.fn)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"
