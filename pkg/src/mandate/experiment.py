"""One configured train/evaluate run, shared by the CLI, scripts and acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass

from .config import seed_streams
from .graph import MultiRelGraph, SynthConfig, split_nodes
from .metrics import MetricsReport
from .model import MandateModel, ModelConfig, ModelInputs, build_inputs
from .train import TrainConfig, TrainHistory, evaluate, inference_batches, train


@dataclass
class RunResult:
    model: MandateModel
    history: TrainHistory
    split: object
    inputs: ModelInputs
    reports: dict

    @property
    def test(self) -> MetricsReport:
        return self.reports["test"]


def synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig(
        num_nodes=cfg["nodes"],
        num_relations=cfg["relations"],
        fraud_rate=cfg["fraud_rate"],
        homophily=cfg["homophily"],
        mean_degree=cfg["mean_degree"],
        feature_dim=cfg["feature_dim"],
        feature_signal=cfg["feature_signal"],
        seed=seed_streams(cfg["seed"])["data"],
    )


def hops_for(cfg: dict) -> int:
    return 1 if cfg["pe_strategy"] == "single_hop" else cfg["K"]


def model_config(cfg: dict, graph: MultiRelGraph) -> ModelConfig:
    return ModelConfig(
        feature_dim=graph.feature_dim,
        num_relations=graph.num_relations,
        K=hops_for(cfg),
        hidden=cfg["hidden"],
        pos_dim=cfg["pos_dim"],
        fused_dim=cfg["fused_dim"],
        model_dim=cfg["model_dim"],
        heads=cfg["heads"],
        layers=cfg["layers"],
        lambda_orth=cfg["lambda_orth"],
        orth_mode=cfg["orth_mode"],
        num_anchors=cfg["anchors"],
        pe_strategy=cfg["pe_strategy"],
        ppr_alpha=cfg["ppr_alpha"],
        seed=seed_streams(cfg["seed"])["init"],
    )


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"],
        patience=cfg["patience"],
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        seed=seed_streams(cfg["seed"])["batch"],
        monitor=cfg["monitor"],
    )


def anchor_seed(cfg: dict) -> int:
    return seed_streams(cfg["seed"])["init"]


def make_split(graph: MultiRelGraph, cfg: dict):
    return split_nodes(graph, cfg["split_ratios"], seed_streams(cfg["seed"])["split"])


def run(graph: MultiRelGraph, cfg: dict, split=None, pe_tables=None, epoch_callback=None) -> RunResult:
    split = make_split(graph, cfg) if split is None else split
    mcfg = model_config(cfg, graph)
    tcfg = train_config(cfg)
    inputs = build_inputs(graph, mcfg.K, mcfg.num_anchors, anchor_seed(cfg), pe_tables)
    model = MandateModel(mcfg, inputs.num_anchors)
    model, history = train(model, inputs, graph.labels, split, tcfg, epoch_callback)
    reports = score_splits(model, inputs, graph, split, tcfg)
    return RunResult(model, history, split, inputs, reports)


def score_splits(model, inputs, graph, split, tcfg, names=("val", "test")) -> dict:
    scores = model.predict_proba(inputs, inference_batches(inputs.num_nodes, tcfg.batch_size, tcfg.seed))
    return {
        name: evaluate(model, inputs, graph.labels, split[name], name, tcfg.batch_size, scores=scores)
        for name in names
    }


def relation_graph(graph: MultiRelGraph, relations) -> MultiRelGraph:
    return graph.subgraph_relations(list(relations))


def summarize(reports: dict) -> dict:
    return {k: {m: getattr(v, m) for m in ("auc", "f1_macro", "gmean")} for k, v in reports.items()}


__all__ = [
    "RunResult",
    "anchor_seed",
    "hops_for",
    "make_split",
    "model_config",
    "relation_graph",
    "run",
    "score_splits",
    "summarize",
    "synth_config",
    "train_config",
]
