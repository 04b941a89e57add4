"""Instrumented selection: sweeps with successive halving, LAB score, Pareto front,
multi-seed aggregation and per-group z-scored correlations."""

from __future__ import annotations

import configparser
import csv
import itertools
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .config import ConfigError, RunConfig, apply_overrides
from .data import WindowedTask
from .diagnostics import EpochDiagnostics, read_jsonl
from .trainer import Trainer, TrainingAborted, _dump

log = logging.getLogger(__name__)

EARLY_METRICS = ("out", "kl_mean", "kl_eff", "mu2_mean", "ar_share")
SUMMARY_METRICS = ("mse", "mae", "out", "kl_mean", "mu2_mean", "ar_share", "band_penalty", "mu_acf")


def lab_score(mse: float, mu2_mean: float, mu2_target: float, lam: float) -> float:
    """MSE + lam * max(0, target - mu2)^2: only under-target latent energy is penalized."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    gap = max(0.0, mu2_target - mu2_mean)
    return mse + lam * gap * gap


def pareto_front(points) -> list[int]:
    """Indices of points not dominated under joint minimization. Ties are kept."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("pareto_front needs a non-empty (n, k) array")
    keep = []
    for i, p in enumerate(pts):
        dominated = np.any(np.all(pts <= p, axis=1) & np.any(pts < p, axis=1))
        if not dominated:
            keep.append(i)
    return keep


# ---------------------------------------------------------------- statistics

def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc, yc = x - x.mean(), y - y.mean()
    return float(np.sum(xc * yc) / math.sqrt(np.sum(xc * xc) * np.sum(yc * yc)))


def pearson_pvalue(r: float, n: int) -> float:
    """Two-sided p-value of r under H0 via t = r sqrt((n-2)/(1-r^2)), df = n-2."""
    if n < 3:
        raise ValueError("need n >= 3")
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * stats.t.sf(abs(t), n - 2))


def permutation_pvalue(x, y, n_perm: int = 1000, rng=None) -> float:
    rng = rng or np.random.default_rng(0)
    r0 = abs(pearson(x, y))
    y = np.asarray(y, dtype=float)
    hits = sum(abs(pearson(x, rng.permutation(y))) >= r0 - 1e-15 for _ in range(n_perm))
    return (hits + 1) / (n_perm + 1)


def correlate(x, y, groups=None) -> tuple[float, float, int]:
    """Pearson r and p after z-scoring both metrics within each group.

    Groups with fewer than two points or zero variance are dropped with a
    warning. Raises ValueError when fewer than three points remain.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if groups is None:
        groups = np.zeros(len(x), dtype=int)
    groups = np.asarray(groups)
    zx, zy = [], []
    for g in dict.fromkeys(groups.tolist()):
        m = groups == g
        gx, gy = x[m], y[m]
        if len(gx) < 2:
            warnings.warn(f"group {g!r}: fewer than 2 points, dropped")
            continue
        sx, sy = gx.std(ddof=1), gy.std(ddof=1)
        if not (sx > 0 and sy > 0):
            warnings.warn(f"group {g!r}: zero variance, dropped")
            continue
        zx.append((gx - gx.mean()) / sx)
        zy.append((gy - gy.mean()) / sy)
    n = sum(len(a) for a in zx)
    if n < 3:
        raise ValueError(f"correlation needs at least 3 pooled points, got {n}")
    zx, zy = np.concatenate(zx), np.concatenate(zy)
    r = pearson(zx, zy)
    return r, pearson_pvalue(r, n), n


def mean_std(values) -> tuple[float | None, float | None]:
    """Mean and sample (n-1) std over non-null values; std is None for n < 2."""
    v = [float(a) for a in values if a is not None]
    if not v:
        return None, None
    arr = np.asarray(v)
    return float(arr.mean()), (float(arr.std(ddof=1)) if len(arr) > 1 else None)


# ---------------------------------------------------------------- sweeps

@dataclass
class Halving:
    stop_epoch: int = 3
    keep_fraction: float = 0.5
    rounds: int = 2

    def __post_init__(self):
        if self.stop_epoch < 1 or self.rounds < 1:
            raise ConfigError("halving stop_epoch and rounds must be >= 1")
        if not 0 < self.keep_fraction <= 1:
            raise ConfigError("halving keep_fraction must lie in (0, 1]")

    def budget(self, rnd: int) -> int:
        return self.stop_epoch * 2 ** rnd

    @classmethod
    def parse(cls, text: str) -> "Halving":
        """``stop=E,keep=F,rounds=R``."""
        kw = {}
        names = {"stop": "stop_epoch", "keep": "keep_fraction", "rounds": "rounds"}
        for part in text.split(","):
            k, _, v = part.partition("=")
            k = k.strip()
            if k not in names:
                raise ConfigError(f"--halving: unknown field {k!r}")
            kw[names[k]] = float(v) if k == "keep" else int(v)
        return cls(**kw)


@dataclass
class SweepSpec:
    grid: dict
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    halving: Halving | None = None
    prune_by: str = "score"
    mu2_target: float = 0.05
    lab_lambda: float = 10.0
    base: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.grid or any(len(v) == 0 for v in self.grid.values()):
            raise ConfigError("sweep grid is empty")
        if not self.seeds:
            raise ConfigError("sweep needs at least one seed")
        if self.prune_by not in ("score", "out"):
            raise ConfigError("sweep prune_by must be 'score' or 'out'")

    def configs(self) -> list[dict]:
        keys = list(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]


def read_sweep_spec(path) -> SweepSpec:
    """INI sweep spec.

    [sweep]  seeds, halving (stop=E,keep=F,rounds=R), prune_by, mu2_target, lab_lambda
    [grid]   section.key = v1, v2, ...
    any other section is a base-config override, as in a run config.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with Path(path).open() as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"{path}: {e}") from None
    sw = parser["sweep"] if parser.has_section("sweep") else {}
    grid = {}
    if parser.has_section("grid"):
        for k, v in parser["grid"].items():
            grid[k] = [s.strip() for s in v.split(",") if s.strip()]
    base = {f"{s}.{k}": v for s in parser.sections() if s not in ("sweep", "grid") for k, v in parser[s].items()}
    kw = {"grid": grid, "base": base}
    if "seeds" in sw:
        kw["seeds"] = [int(s) for s in sw["seeds"].split(",") if s.strip()]
    if sw.get("halving", "").strip():
        kw["halving"] = Halving.parse(sw["halving"])
    for k, conv in (("prune_by", str), ("mu2_target", float), ("lab_lambda", float)):
        if k in sw:
            kw[k] = conv(sw[k])
    return SweepSpec(**kw)


@dataclass
class SweepTrial:
    trial_id: str
    config_id: int
    overrides: dict
    seed: int
    status: str = "running"
    history: list = field(default_factory=list)
    rounds: list = field(default_factory=list)
    pruned_round: int | None = None
    lab_score: float | None = None
    final_val_mse: float | None = None
    report: dict | None = None
    error: str | None = None
    trainer: Trainer | None = None
    loaded: bool = False

    def record(self) -> dict:
        return {"trial_id": self.trial_id, "config_id": self.config_id, "overrides": self.overrides,
                "seed": self.seed, "status": self.status, "rounds": self.rounds,
                "pruned_round": self.pruned_round, "lab_score": self.lab_score,
                "final_val_mse": self.final_val_mse, "report": self.report, "error": self.error}

    def val_history(self) -> list[EpochDiagnostics]:
        return [r for r in self.history if r.split == "val"]


def _advance(job):
    trainer, epoch, finish = job
    try:
        if finish:
            trainer.run()
            report = trainer.report()
        else:
            trainer.run_until(epoch)
            report = None
        return trainer, report, None
    except TrainingAborted as e:
        return trainer, None, str(e)


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _rank_value(trial: SweepTrial, by: str) -> float:
    if trial.status == "failed":
        return math.inf
    last = trial.rounds[-1]
    v = last["score"] if by == "score" else last["out"]
    return math.inf if v is None else v


def run_sweep(spec: SweepSpec, task: WindowedTask, base: RunConfig | None = None,
              out_dir=None, workers: int = 1) -> list[SweepTrial]:
    """Grid x seeds, optionally with successive halving over whole configs.

    Halving round r runs every live trial to stop_epoch * 2**r epochs, ranks
    configs by their mean rank value over seeds, and keeps ceil(keep * n).
    Survivors then train to completion. With ``out_dir`` every trial gets a
    directory; trials whose ``trial.json`` exists are loaded, not re-run.
    """
    base = apply_overrides(base or RunConfig(), spec.base)
    out = Path(out_dir) if out_dir else None
    trials: list[SweepTrial] = []
    for ci, ov in enumerate(spec.configs()):
        for seed in spec.seeds:
            cfg = apply_overrides(base, {**ov, "train.seed": seed})
            t = SweepTrial(f"c{ci:03d}_s{seed}", ci, ov, seed)
            tdir = out / "trials" / t.trial_id if out else None
            if tdir is not None and (tdir / "trial.json").exists():
                _load_trial(t, tdir)
                t.loaded = True
            else:
                log_path = None
                if tdir is not None:
                    tdir.mkdir(parents=True, exist_ok=True)
                    log_path = tdir / "history.jsonl"
                    if log_path.exists():
                        log_path.unlink()
                    _dump(tdir / "run_meta.json", {
                        "config": cfg.to_dict(), "config_hash": cfg.hash(), "seed": seed,
                        "labels": {"cell": f"c{ci:03d}", "config_id": ci, "overrides": ov}})
                t.trainer = Trainer(cfg, task, log_path)
            trials.append(t)

    alive = sorted({t.config_id for t in trials})
    if spec.halving is not None:
        for rnd in range(spec.halving.rounds):
            budget = spec.halving.budget(rnd)
            todo = [t for t in trials if t.config_id in alive and not t.loaded and t.status == "running"]
            for t, (trainer, _, err) in zip(todo, _map(_advance, [(t.trainer, budget, False) for t in todo], workers)):
                t.trainer = trainer
                if err:
                    t.status, t.error = "failed", err
                best = trainer.best
                last_val = trainer.val_history()[-1] if trainer.val_history() else None
                t.rounds.append({"round": rnd, "epoch": trainer.epoch,
                                 "score": best.val_score if best else None,
                                 "best_val_mse": best.val_mse if best else None,
                                 "out": last_val.out if last_val else None})
            by_config = {}
            for t in trials:
                if t.config_id in alive:
                    by_config.setdefault(t.config_id, []).append(_rank_value(t, spec.prune_by) if len(t.rounds) > rnd else math.inf)
            ranked = sorted(alive, key=lambda c: (float(np.mean(by_config[c])), c))
            n_keep = max(1, math.ceil(len(alive) * spec.halving.keep_fraction))
            survivors = set(ranked[:n_keep])
            for t in trials:
                if t.config_id in alive and t.config_id not in survivors and not t.loaded and t.status == "running":
                    t.status, t.pruned_round = "pruned", rnd
            alive = [c for c in alive if c in survivors]
            log.info("halving round %d: %d configs kept", rnd, len(alive))

    todo = [t for t in trials if t.config_id in alive and not t.loaded and t.status == "running"]
    for t, (trainer, report, err) in zip(todo, _map(_advance, [(t.trainer, None, True) for t in todo], workers)):
        t.trainer = trainer
        if err:
            t.status, t.error = "failed", err
        else:
            t.status, t.report = "finished", report
    for t in trials:
        if t.loaded:
            continue
        tr = t.trainer
        t.history = list(tr.history)
        if tr.best is not None:
            t.final_val_mse = tr.best.val_mse
            d = tr.best.diagnostics
            if d.mu2_mean is not None:
                t.lab_score = lab_score(tr.best.val_mse, d.mu2_mean, spec.mu2_target, spec.lab_lambda)
            else:
                t.lab_score = tr.best.val_mse
        t.trainer = None
        if out is not None:
            tdir = out / "trials" / t.trial_id
            if t.report is not None:
                _dump(tdir / "test_report.json", t.report)
            _dump(tdir / "trial.json", t.record())
    return trials


def _load_trial(t: SweepTrial, tdir: Path):
    rec = json.loads((tdir / "trial.json").read_text())
    for k in ("status", "rounds", "pruned_round", "lab_score", "final_val_mse", "report", "error"):
        setattr(t, k, rec.get(k))
    hist = tdir / "history.jsonl"
    t.history = read_jsonl(hist) if hist.exists() else []


def summarize_sweep(trials: list[SweepTrial], spec: SweepSpec) -> list[dict]:
    rows = []
    for ci, ov in enumerate(spec.configs()):
        group = [t for t in trials if t.config_id == ci]
        statuses = {t.status for t in group}
        row = {"config_id": ci, **ov, "n_seeds": len(group),
               "status": "/".join(sorted(statuses)),
               "pruned_round": next((t.pruned_round for t in group if t.pruned_round is not None), None)}
        row["val_mse_mean"], row["val_mse_std"] = mean_std(t.final_val_mse for t in group)
        row["lab_score_mean"], row["lab_score_std"] = mean_std(t.lab_score for t in group)
        finished = [t.report["test"] for t in group if t.status == "finished" and t.report]
        for m in SUMMARY_METRICS:
            row[f"{m}_mean"], row[f"{m}_std"] = mean_std(r.get(m) for r in finished)
        rows.append(row)
    return rows


def sweep_front(trials: list[SweepTrial], spec: SweepSpec) -> list[dict]:
    """Pareto front over finished configs on (val MSE, |mu2 - target|) at the selected checkpoint."""
    rows = []
    for ci, ov in enumerate(spec.configs()):
        group = [t for t in trials if t.config_id == ci and t.status == "finished"]
        if not group:
            continue
        vals = [(t.final_val_mse, _best_val(t)) for t in group]
        mse = float(np.mean([v[0] for v in vals]))
        mu2 = [v[1].mu2_mean for v in vals if v[1] is not None and v[1].mu2_mean is not None]
        gap = abs(float(np.mean(mu2)) - spec.mu2_target) if mu2 else math.inf
        rows.append({"config_id": ci, **ov, "val_mse": mse, "mu2_gap": gap})
    if not rows:
        return []
    idx = pareto_front([(r["val_mse"], r["mu2_gap"]) for r in rows])
    return [rows[i] for i in idx]


def _best_val(t: SweepTrial) -> EpochDiagnostics | None:
    vals = t.val_history()
    if not vals or t.report is None:
        return None
    best_epoch = t.report["best_epoch"]
    return next((r for r in vals if r.epoch == best_epoch), None)


def early_signal_report(trials: list[SweepTrial], stop_epoch: int, metrics=EARLY_METRICS,
                        group_key=None) -> tuple[list[dict], dict]:
    """Correlate early internal metrics with the best validation MSE reached by ``stop_epoch``.

    Returns (table rows, scatter data per metric). A metric whose correlation
    is undefined gets r = p = None and a reason.
    """
    points = []
    for t in trials:
        vals = [r for r in t.val_history() if r.epoch <= stop_epoch]
        if not vals:
            continue
        at_stop = vals[-1]
        best_mse = min(r.mse for r in vals if r.mse is not None)
        grp = group_key(t) if callable(group_key) else 0
        points.append((t.trial_id, at_stop, best_mse, grp))
    rows, scatter = [], {}
    for m in metrics:
        pts = [(tid, getattr(rec, m), y, g) for tid, rec, y, g in points if getattr(rec, m) is not None]
        scatter[m] = [{"trial_id": tid, m: x, "best_val_mse": y, "group": g} for tid, x, y, g in pts]
        row = {"metric": m, "r": None, "p": None, "n": len(pts), "reason": ""}
        if len(pts) < 3:
            row["reason"] = "fewer than 3 trials with this metric"
        else:
            xs = np.array([p[1] for p in pts])
            ys = np.array([p[2] for p in pts])
            gs = np.array([p[3] for p in pts])
            with warnings.catch_warnings(record=True):
                warnings.simplefilter("always")
                try:
                    row["r"], row["p"], row["n"] = correlate(xs, ys, gs)
                except ValueError:
                    row["reason"] = "zero variance" if np.ptp(xs) == 0 or np.ptp(ys) == 0 else "too few points"
        rows.append(row)
    return rows, scatter


# ---------------------------------------------------------------- aggregation

def aggregate_reports(entries, metrics=SUMMARY_METRICS) -> list[dict]:
    """Mean and sample std per cell. ``entries`` are dicts with cell labels and a report (or None)."""
    cells: dict[str, list] = {}
    for e in entries:
        cells.setdefault(e["cell"], []).append(e)
    rows = []
    for cell, group in cells.items():
        ok = [e for e in group if e.get("report") and e["report"].get("status") == "ok"]
        first = group[0]
        row = {"cell": cell, "model": first.get("model"), "regime": first.get("regime"),
               "ar": first.get("ar"), "n": len(ok), "n_failed": len(group) - len(ok),
               "seeds": " ".join(str(e["seed"]) for e in sorted(group, key=lambda e: e["seed"]))}
        for m in metrics:
            row[f"{m}_mean"], row[f"{m}_std"] = mean_std(e["report"]["test"].get(m) for e in ok)
        rows.append(row)
    return rows


def load_run_entries(root) -> list[dict]:
    """Every run directory below ``root`` (dirs holding run_meta.json), sorted by path."""
    root = Path(root)
    metas = sorted(root.rglob("run_meta.json")) if root.is_dir() else []
    out = []
    for meta_path in metas:
        d = meta_path.parent
        meta = json.loads(meta_path.read_text())
        labels = meta.get("labels") or {}
        rep_path = d / "test_report.json"
        report = json.loads(rep_path.read_text()) if rep_path.exists() else None
        cfg = meta.get("config", {})
        out.append({
            "dir": str(d), "cell": labels.get("cell", d.name), "model": labels.get("model", cfg.get("model", {}).get("kind")),
            "regime": labels.get("regime", cfg.get("control", {}).get("regime")),
            "ar": labels.get("ar", cfg.get("ar", {}).get("mode")), "seed": meta.get("seed"),
            "task": cfg.get("data", {}).get("kind") if cfg.get("data", {}).get("source") == "synthetic"
            else cfg.get("data", {}).get("path"),
            "report": report,
        })
    return out


def write_csv(rows: list[dict], path):
    path = Path(path)
    if not rows:
        path.write_text("")
        return
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [c for c in r if c not in cols]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k])) for k in cols})
