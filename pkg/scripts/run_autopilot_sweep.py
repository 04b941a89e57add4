"""24-config sweep with successive halving, then the early-signal correlation table.

    python3 scripts/run_autopilot_sweep.py [--spec configs/sweep24.cfg] [--out runs/sweep24]

Re-running with the same --out resumes: finished trials are loaded, not retrained.
"""

import argparse
import sys
from pathlib import Path

from eve_neuron.config import apply_overrides, load_config
from eve_neuron.data import build_task
from eve_neuron.lab import (
    early_signal_report,
    read_sweep_spec,
    run_sweep,
    summarize_sweep,
    sweep_front,
    write_csv,
)

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--spec", default=str(ROOT / "configs" / "sweep24.cfg"))
    ap.add_argument("--out", default="runs/sweep24")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    spec = read_sweep_spec(args.spec)
    base = load_config()
    task = build_task(apply_overrides(base, spec.base).data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trials = run_sweep(spec, task, base, out, workers=args.workers)

    n = len(spec.configs())
    alive = [n]
    if spec.halving:
        for rnd in range(spec.halving.rounds):
            pruned = {t.config_id for t in trials if t.pruned_round == rnd}
            alive.append(alive[-1] - len(pruned))
    print("configs alive per round:", " -> ".join(map(str, alive)))

    rows = summarize_sweep(trials, spec)
    write_csv(rows, out / "sweep_summary.csv")
    front = sweep_front(trials, spec)
    write_csv(front, out / "front.csv")
    print("pareto front (val mse, |mu2 - target|):")
    for r in front:
        print(f"  config {r['config_id']:2d}  {r['val_mse']:.4f}  {r['mu2_gap']:.4f}")
    if spec.halving:
        corr, _ = early_signal_report(trials, spec.halving.stop_epoch)
        write_csv(corr, out / "correlations.csv")
        print(f"early signals at epoch {spec.halving.stop_epoch} vs best val mse so far:")
        for r in corr:
            if r["r"] is None:
                print(f"  {r['metric']:9s} undefined ({r['reason']})")
            else:
                print(f"  {r['metric']:9s} r={r['r']:+.3f} p={r['p']:.3g} n={r['n']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
