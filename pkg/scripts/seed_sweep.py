"""Repeat the desk experiment over several root seeds and report AUC per variant.

    python3 scripts/seed_sweep.py --seeds 0 1 2 [--config configs/desk.cfg] [--variants fused single_hop]
"""
import argparse
from pathlib import Path

import numpy as np

from mandate import config as C
from mandate import experiment as X
from mandate.graph import synth_generate

VARIANTS = ("fused", "single_hop", "ppr", "rel_0", "rel_1")


def variant_auc(graph, cfg, split, variant):
    if variant == "fused":
        return X.run(graph, cfg, split).test.auc
    if variant in ("single_hop", "ppr"):
        return X.run(graph, dict(cfg, pe_strategy=variant), split).test.auc
    r = int(variant.split("_")[1])
    return X.run(X.relation_graph(graph, [r]), cfg, split).test.auc


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "desk.cfg"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    args = ap.parse_args()

    table = {v: [] for v in args.variants}
    for seed in args.seeds:
        cfg = C.resolve(args.config, {"seed": seed})
        graph = synth_generate(X.synth_config(cfg))
        split = X.make_split(graph, cfg)
        for v in args.variants:
            table[v].append(variant_auc(graph, cfg, split, v))
            print(f"seed {seed:>3}  {v:<10} auc {table[v][-1]:.4f}", flush=True)
    print()
    for v, values in table.items():
        print(f"{v:<10} " + " ".join(f"{a:.4f}" for a in values) + f"   mean {np.mean(values):.4f}")


if __name__ == "__main__":
    main()
