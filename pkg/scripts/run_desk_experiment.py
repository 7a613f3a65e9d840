"""Desk-scale experiment: synthetic data, training, and both ablations through the CLI.

    python3 scripts/run_desk_experiment.py --out runs/desk [--config configs/desk.cfg]
"""
import argparse
import csv
import json
import sys
import time
from pathlib import Path

from mandate.cli import main as cli


def step(*argv):
    t = time.perf_counter()
    code = cli(list(argv))
    if code:
        sys.exit(f"{argv[0]} failed with exit code {code}")
    print(f"  {argv[0]}: {time.perf_counter() - t:.1f}s")


def auc_rows(path):
    with open(path) as fh:
        return [(r["variant"], float(r["value"])) for r in csv.DictReader(fh) if r["metric"] == "auc"]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "desk.cfg"))
    args = ap.parse_args()
    out, cfg = Path(args.out), args.config

    step("prepare-synthetic", "--config", cfg, "--out", str(out / "data"))
    step("train", "--config", cfg, "--data", str(out / "data"), "--out", str(out / "train"))
    step("ablate-pe", "--config", cfg, "--data", str(out / "data"), "--out", str(out / "ablate_pe"))
    step("ablate-fusion", "--config", cfg, "--data", str(out / "data"), "--out", str(out / "ablate_fusion"))

    m = json.loads((out / "train" / "metrics.json").read_text())
    print(f"\ntest  auc {m['auc']:.4f}  f1_macro {m['f1_macro']:.4f}  gmean {m['gmean']:.4f}")
    for name in ("ablate_pe", "ablate_fusion"):
        print(f"\n{name}")
        for variant, value in auc_rows(out / name / "ablation.csv"):
            print(f"  {variant:<14} auc {value:.4f}")


if __name__ == "__main__":
    main()
