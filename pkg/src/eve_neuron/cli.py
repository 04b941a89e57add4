"""Command line: train, ablate, sweep, analyze.

Exit codes: 0 ok, 2 bad config, 3 bad data, 4 training aborted, 5 some jobs in
a batch command failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, apply_overrides, load_config, parse_set
from .data import DataError, build_task
from .lab import (
    Halving,
    aggregate_reports,
    correlate,
    early_signal_report,
    load_run_entries,
    read_sweep_spec,
    run_sweep,
    summarize_sweep,
    sweep_front,
    write_csv,
)
from .trainer import TrainingAborted, fit_ablation_matrix, train_run

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ABORTED, EXIT_PARTIAL = 0, 2, 3, 4, 5

log = logging.getLogger("eve_neuron")


def _config(args, extra=None):
    overrides = parse_set(args.set)
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = str(args.seed)
    overrides.update(extra or {})
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _config(args)
    report = train_run(cfg, args.out)
    t = report["test"]
    print(f"run {report['config_hash']} seed {report['seed']}: best epoch {report['best_epoch']}, "
          f"test mse {t['mse']:.4f} (persistence {report['persistence']['mse']:.4f})")
    return EXIT_OK


def _ablate_job(job):
    cfg, out_dir, task, labels = job
    try:
        train_run(cfg, out_dir, task, labels)
        return True
    except TrainingAborted:
        return False


def _pmap(fn, jobs, workers):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def cmd_ablate(args) -> int:
    base = _config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    task = build_task(base.data)
    out = Path(args.out)
    jobs = []
    for j in fit_ablation_matrix(base, seeds=seeds, include_baseline=not args.no_baseline):
        labels = {k: j[k] for k in ("cell", "model", "regime", "ar")}
        jobs.append((j["config"], out / j["cell"] / f"seed{j['seed']}", task, labels))
    ok = _pmap(_ablate_job, jobs, args.workers)
    rows = aggregate_reports(load_run_entries(out))
    write_csv(rows, out / "ablation_summary.csv")
    _print_rows(rows, ("cell", "n", "mse_mean", "out_mean", "kl_mean_mean", "ar_share_mean", "mu_acf_mean"))
    n_bad = len(ok) - sum(ok)
    if n_bad:
        print(f"{n_bad} of {len(ok)} runs failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = read_sweep_spec(args.spec)
    if args.halving:
        spec.halving = Halving.parse(args.halving)
    base = _config(args)
    task = build_task(apply_overrides(base, spec.base).data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trials = run_sweep(spec, task, base, out, workers=args.workers)
    write_csv(summarize_sweep(trials, spec), out / "sweep_summary.csv")
    write_csv(sweep_front(trials, spec), out / "front.csv")
    if spec.halving is not None:
        rows, scatter = early_signal_report(trials, spec.halving.stop_epoch)
        write_csv(rows, out / "correlations.csv")
        for metric, pts in scatter.items():
            write_csv(pts, out / f"scatter_{metric}.csv")
    status = {}
    for t in trials:
        status[t.status] = status.get(t.status, 0) + 1
    print(f"sweep: {len(spec.configs())} configs x {len(spec.seeds)} seeds, trials {status}")
    return EXIT_PARTIAL if status.get("failed") else EXIT_OK


def cmd_analyze(args) -> int:
    entries = load_run_entries(args.root)
    if not entries:
        print(f"no runs found under {args.root}", file=sys.stderr)
        return EXIT_CONFIG
    rows = aggregate_reports(entries)
    out = Path(args.out) if args.out else Path(args.root) / "ablation_summary.csv"
    write_csv(rows, out)
    _print_rows(rows, ("cell", "n", "mse_mean", "out_mean", "kl_mean_mean", "ar_share_mean", "mu_acf_mean"))
    corr_rows = []
    for pair in args.pairs or []:
        mx, _, my = pair.partition(":")
        pts = [e for e in entries if e["report"] and e["report"]["test"].get(mx) is not None
               and e["report"]["test"].get(my) is not None]
        row = {"x": mx, "y": my, "r": None, "p": None, "n": len(pts), "reason": ""}
        try:
            row["r"], row["p"], row["n"] = correlate(
                [e["report"]["test"][mx] for e in pts], [e["report"]["test"][my] for e in pts],
                [str(e.get(args.group)) for e in pts])
        except ValueError as e:
            row["reason"] = str(e)
        corr_rows.append(row)
        print(f"corr({mx}, {my}) grouped by {args.group}: r={row['r']} p={row['p']} n={row['n']} {row['reason']}")
    if corr_rows:
        write_csv(corr_rows, out.with_name("correlations.csv"))
    return EXIT_OK


def _print_rows(rows, cols):
    print("  ".join(f"{c:>14}" for c in cols))
    for r in rows:
        cells = []
        for c in cols:
            v = r.get(c)
            cells.append(f"{v:>14.4f}" if isinstance(v, float) else f"{'-' if v is None else v:>14}")
        print("  ".join(cells))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eve-neuron", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override, repeatable")
        sp.add_argument("--out", default=out_default)

    sp = sub.add_parser("train", help="train one model and evaluate it")
    common(sp, "runs/train")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("ablate", help="regime x AR matrix plus deterministic baseline")
    common(sp, "runs/ablation")
    sp.add_argument("--seeds", default="0,1,2,3,4")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--no-baseline", action="store_true")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("sweep", help="grid sweep with optional successive halving")
    sp.add_argument("spec", help="sweep spec INI")
    common(sp, "runs/sweep")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--halving", metavar="stop=E,keep=F,rounds=R")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("analyze", help="re-aggregate finished run directories")
    sp.add_argument("root")
    sp.add_argument("--out", help="summary CSV path (default ROOT/ablation_summary.csv)")
    sp.add_argument("--pairs", action="append", metavar="X:Y", help="test metrics to correlate")
    sp.add_argument("--group", default="task", help="entry field to z-score within")
    sp.set_defaults(fn=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingAborted as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
