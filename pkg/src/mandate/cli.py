"""Command-line entry point: data preparation, PE precompute, training, evaluation, ablations."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import experiment as X
from .graph import GraphFormatError, load_dataset, read_split, save_dataset, synth_generate, write_split
from .model import MandateModel, build_inputs
from .train import DivergenceError, evaluate
from .walk import StaleCacheError, choose_anchors, load_pe_cache, pe_cache_path, pe_rows, save_pe_cache, walk_operator

log = logging.getLogger("mandate")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
METRIC_NAMES = ("auc", "f1_macro", "gmean")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _resolve(args, **flags) -> dict:
    overrides = _overrides(getattr(args, "set", None))
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return C.resolve(getattr(args, "config", None), overrides)


def _echo_config(cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(C.dump(cfg))


# ---------------------------------------------------------------- commands


def cmd_prepare_synthetic(args) -> int:
    cfg = _resolve(
        args,
        nodes=args.nodes,
        relations=args.relations,
        homophily=args.homophily,
        fraud_rate=args.fraud_rate,
        mean_degree=args.mean_degree,
        feature_dim=args.feature_dim,
        feature_signal=args.feature_signal,
        seed=args.seed,
    )
    if len(cfg["homophily"]) != cfg["relations"]:
        raise UsageError(f"--homophily lists {len(cfg['homophily'])} values for {cfg['relations']} relations")
    if len(cfg["mean_degree"]) == 1:
        cfg["mean_degree"] = cfg["mean_degree"] * cfg["relations"]
    if len(cfg["mean_degree"]) != cfg["relations"]:
        raise UsageError(f"--mean-degree lists {len(cfg['mean_degree'])} values for {cfg['relations']} relations")
    try:
        scfg = X.synth_config(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    graph = synth_generate(scfg)
    save_dataset(graph, out)
    _echo_config(cfg, out)
    log.info("wrote %d-node, %d-relation dataset to %s", graph.num_nodes, graph.num_relations, out)
    return EXIT_OK


def cmd_precompute_pe(args) -> int:
    cfg = _resolve(args, K=args.k, anchors=args.anchors, seed=args.seed)
    graph = load_dataset(args.data)
    if cfg["anchors"] > graph.num_nodes:
        log.warning("anchors clamped from %d to %d (number of nodes)", cfg["anchors"], graph.num_nodes)
        cfg["anchors"] = graph.num_nodes
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pe_caches(graph, cfg, out)
    _echo_config(cfg, out)
    return EXIT_OK


def write_pe_caches(graph, cfg: dict, out: Path, K: int | None = None) -> list:
    K = cfg["K"] if K is None else K
    anchors = choose_anchors(graph.num_nodes, cfg["anchors"], X.anchor_seed(cfg))
    gh = graph.content_hash()
    out.mkdir(parents=True, exist_ok=True)
    tables = []
    for r in range(graph.num_relations):
        pe = pe_rows(walk_operator(graph.adjacencies[r]), None, K, anchors)
        save_pe_cache(pe, gh, pe_cache_path(out, r))
        tables.append(pe)
    return tables


def _load_caches(graph, directory) -> list:
    gh = graph.content_hash()
    tables = []
    for r in range(graph.num_relations):
        path = pe_cache_path(directory, r)
        if not path.exists():
            raise GraphFormatError(f"missing PE cache for relation {r}: {path}")
        tables.append(load_pe_cache(path, gh))
    return tables


def _check_cached_anchors(tables, graph, cfg):
    expected = choose_anchors(graph.num_nodes, cfg["anchors"], X.anchor_seed(cfg))
    for r, pe in enumerate(tables):
        if not np.array_equal(pe.anchors, expected):
            raise GraphFormatError(
                f"PE cache for relation {r} was built with different anchors (m={pe.anchors.size}, "
                f"config expects m={expected.size} for seed {cfg['seed']})"
            )


def _metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "metric", "value"])
    for variant, report in rows:
        for m in METRIC_NAMES:
            w.writerow([variant, m, repr(float(getattr(report, m)))])
    return buf.getvalue()


def cmd_train(args) -> int:
    cfg = _resolve(args, seed=args.seed)
    graph = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)
    K = X.hops_for(cfg)
    if args.pe_cache:
        tables = _load_caches(graph, args.pe_cache)
        _check_cached_anchors(tables, graph, cfg)
    else:
        tables = write_pe_caches(graph, cfg, out / "pe", K)
    split = X.make_split(graph, cfg)
    write_split(split, out / "split.json")
    try:
        result = X.run(graph, cfg, split, tables)
    except DivergenceError as exc:
        exc.model.save(out / "model.params")
        (out / "history.csv").write_text(exc.history.to_csv())
        raise
    result.model.save(out / "model.params")
    (out / "history.csv").write_text(result.history.to_csv())
    (out / "metrics.json").write_text(result.test.to_json())
    log.info(
        "best epoch %d of %d; test auc %.4f f1_macro %.4f gmean %.4f",
        result.history.best_epoch,
        result.history.last_epoch,
        result.test.auc,
        result.test.f1_macro,
        result.test.gmean,
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise GraphFormatError(f"missing checkpoint: {ckpt}")
    run_dir = ckpt.parent
    cfg_path = run_dir / "config.resolved"
    cfg = C.resolve(cfg_path if cfg_path.exists() else None)
    graph = load_dataset(args.data)
    model = MandateModel.load(ckpt)
    mc = model.cfg
    if mc.feature_dim != graph.feature_dim:
        raise GraphFormatError(
            f"dimension mismatch: checkpoint feature_dim={mc.feature_dim}, dataset feature_dim={graph.feature_dim}"
        )
    if mc.num_relations != graph.num_relations:
        raise GraphFormatError(
            f"dimension mismatch: checkpoint num_relations={mc.num_relations}, dataset num_relations={graph.num_relations}"
        )
    split_path = Path(args.split_file) if args.split_file else run_dir / "split.json"
    split = read_split(split_path) if split_path.exists() else X.make_split(graph, cfg)
    inputs = build_inputs(graph, mc.K, mc.num_anchors, X.anchor_seed(cfg))
    tcfg = X.train_config(cfg)
    report = evaluate(model, inputs, graph.labels, split[args.split], args.split, tcfg.batch_size, tcfg.seed)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json())
    log.info("%s auc %.4f f1_macro %.4f gmean %.4f", args.split, report.auc, report.f1_macro, report.gmean)
    return EXIT_OK


def cmd_ablate_pe(args) -> int:
    cfg = _resolve(args, seed=args.seed)
    if cfg["K"] < 2:
        raise UsageError("ablate-pe needs K >= 2 for the multi-scale strategy")
    graph = load_dataset(args.data)
    out = Path(args.out)
    _echo_config(cfg, out)
    split = X.make_split(graph, cfg)
    rows = []
    for strategy in ("multiscale", "single_hop", "ppr"):
        run_cfg = dict(cfg, pe_strategy=strategy)
        result = X.run(graph, run_cfg, split)
        rows.append((strategy, result.test))
        log.info("%s: test auc %.4f", strategy, result.test.auc)
    (out / "ablation.csv").write_text(_metrics_csv(rows))
    return EXIT_OK


def cmd_ablate_fusion(args) -> int:
    cfg = _resolve(args, seed=args.seed)
    graph = load_dataset(args.data)
    out = Path(args.out)
    _echo_config(cfg, out)
    split = X.make_split(graph, cfg)
    rows = []
    for r in range(graph.num_relations):
        result = X.run(X.relation_graph(graph, [r]), cfg, split)
        rows.append((f"{graph.relation_names[r]}-only", result.test))
        log.info("%s only: test auc %.4f", graph.relation_names[r], result.test.auc)
    result = X.run(graph, cfg, split)
    rows.append(("fused", result.test))
    log.info("fused: test auc %.4f", result.test.auc)
    (out / "ablation.csv").write_text(_metrics_csv(rows))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mandate", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("prepare-synthetic", help="generate a synthetic fraud graph")
    common(sp, data=False)
    sp.add_argument("--out", required=True)
    sp.add_argument("--nodes", type=int)
    sp.add_argument("--relations", type=int)
    sp.add_argument("--homophily", help="comma-separated, one per relation")
    sp.add_argument("--fraud-rate", type=float)
    sp.add_argument("--mean-degree", help="comma-separated, one per relation (or one for all)")
    sp.add_argument("--feature-dim", type=int)
    sp.add_argument("--feature-signal", type=float)
    sp.set_defaults(func=cmd_prepare_synthetic)

    sp = sub.add_parser("precompute-pe", help="write per-relation PE cache files")
    common(sp)
    sp.add_argument("--k", type=int)
    sp.add_argument("--anchors", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_precompute_pe)

    sp = sub.add_parser("train", help="train and write checkpoint, history and test metrics")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pe-cache", help="directory holding precomputed PE caches")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.add_argument("--split-file")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate-pe", help="compare multi-scale, single-hop and frozen-PPR encodings")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate_pe)

    sp = sub.add_parser("ablate-fusion", help="compare each single relation against fusion")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate_fusion)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, C.ConfigError) as exc:
        print(f"mandate: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, FloatingPointError) as exc:
        print(f"mandate: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GraphFormatError, StaleCacheError, ValueError, OSError) as exc:
        print(f"mandate: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
