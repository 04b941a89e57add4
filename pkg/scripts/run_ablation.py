"""Regime x AR ablation plus deterministic baseline, five seeds per cell.

    python3 scripts/run_ablation.py [--config configs/ar_latent.cfg] [--out runs/ablation] [--workers 1]

Writes one run directory per (cell, seed) and ablation_summary.csv.
"""

import argparse
import csv
import sys
from pathlib import Path

from eve_neuron.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "ar_latent.cfg"))
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--workers", default="1")
    args, extra = ap.parse_known_args()
    code = cli_main(["ablate", "--config", args.config, "--out", args.out, "--seeds", args.seeds,
                     "--workers", args.workers, *extra])
    rows = list(csv.DictReader(open(Path(args.out) / "ablation_summary.csv")))
    on = {r["regime"]: r for r in rows if r["ar"] == "on"}
    off = {r["regime"]: r for r in rows if r["ar"] == "off"}
    print("\nlag-1 autocorrelation of mu, AR on vs off")
    for regime in on:
        print(f"  {regime:8s} on {float(on[regime]['mu_acf_mean']):.4f}  off {float(off[regime]['mu_acf_mean']):.4f}")
    return code


if __name__ == "__main__":
    sys.exit(main())
