"""Per-epoch dashboard of internal observables, regime flags and JSONL persistence."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")

# Fields that only exist for a latent model; null for the deterministic baseline.
LATENT_FIELDS = (
    "kl_mean", "kl_eff", "kl_sum", "mu2_mean", "frac_low", "frac_high", "out",
    "band_penalty", "clamp_low", "clamp_high", "reparam_proxy", "l_ar", "ar_share",
    "constraint_energy", "mu_acf", "loss_kl", "loss_ar", "loss_band",
)
# Averaged over batches; out, counters and clamps are handled separately.
_MEAN_FIELDS = (
    "mse", "mae", "kl_mean", "kl_eff", "kl_sum", "mu2_mean", "frac_low", "frac_high",
    "band_penalty", "reparam_proxy", "l_ar", "ar_share", "constraint_energy", "mu_acf",
    "loss_total", "loss_task", "loss_kl", "loss_ar", "loss_band",
)


@dataclass
class EpochDiagnostics:
    epoch: int
    split: str
    mse: float | None = None
    mae: float | None = None
    kl_mean: float | None = None
    kl_eff: float | None = None
    kl_sum: float | None = None
    mu2_mean: float | None = None
    frac_low: float | None = None
    frac_high: float | None = None
    out: float | None = None
    band_penalty: float | None = None
    clamp_low: float | None = None
    clamp_high: float | None = None
    reparam_proxy: float | None = None
    l_ar: float | None = None
    ar_share: float | None = None
    constraint_energy: float | None = None
    mu_acf: float | None = None
    loss_total: float | None = None
    loss_task: float | None = None
    loss_kl: float | None = None
    loss_ar: float | None = None
    loss_band: float | None = None
    n_nonfinite_events: int = 0
    zero_mu2_nudges: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EpochDiagnostics":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class DiagConfig:
    kl_tau: float = 0.01
    collapse_frac: float = 0.9
    saturate_frac: float = 0.9
    drift_window: int = 10
    drift_threshold: float = 0.005


@dataclass
class RegimeFlags:
    collapsed: bool
    saturated: bool
    drifting: bool
    drift_slope: float | None = None


def _finite(v) -> bool:
    return v is not None and math.isfinite(v)


def collect(batches, epoch: int, split: str, *, clamps=None, nudges: int = 0,
            nonfinite: int = 0) -> EpochDiagnostics:
    """Batch-size-weighted means of per-batch statistics.

    ``batches`` is a sequence of (weight, stats) pairs as produced by the
    objective. A field missing from every batch stays null. Non-finite batch
    values are counted and excluded; a field with nothing finite left is null.
    ``clamps`` is a list of (clamp_low, clamp_high) from projection steps.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    batches = list(batches)
    if not batches:
        raise ValueError("collect needs at least one batch")
    rec = EpochDiagnostics(epoch=epoch, split=split)
    bad = nonfinite
    for name in _MEAN_FIELDS:
        num = den = 0.0
        seen = False
        for w, st in batches:
            v = st.get(name)
            if v is None:
                continue
            seen = True
            if not math.isfinite(v):
                bad += 1
                continue
            num += w * v
            den += w
        if seen and den > 0:
            setattr(rec, name, num / den)
    if rec.frac_low is not None and rec.frac_high is not None:
        rec.out = rec.frac_low + rec.frac_high
    if clamps:
        c = np.asarray(clamps, dtype=float)
        rec.clamp_low = float(c[:, 0].mean())
        rec.clamp_high = float(c[:, 1].mean())
    rec.n_nonfinite_events = int(bad)
    rec.zero_mu2_nudges = int(nudges)
    return rec


def _slope(y) -> float:
    y = np.asarray(y, dtype=float)
    x = np.arange(len(y), dtype=float)
    xc = x - x.mean()
    return float(np.sum(xc * (y - y.mean())) / np.sum(xc * xc))


def flag_regimes(history, cfg: DiagConfig | None = None) -> RegimeFlags:
    """Collapse / saturation at the last record, drift over the trailing window."""
    cfg = cfg or DiagConfig()
    if not history:
        raise ValueError("empty history")
    last = history[-1]
    collapsed = (_finite(last.kl_eff) and _finite(last.frac_low)
                 and last.kl_eff < cfg.kl_tau and last.frac_low > cfg.collapse_frac)
    saturated = _finite(last.frac_high) and last.frac_high > cfg.saturate_frac
    slope = None
    tail = history[-cfg.drift_window:]
    if len(tail) >= max(cfg.drift_window, 2) and all(_finite(r.mu2_mean) for r in tail):
        slope = _slope([r.mu2_mean for r in tail])
    drifting = slope is not None and abs(slope) > cfg.drift_threshold
    return RegimeFlags(bool(collapsed), bool(saturated), bool(drifting), slope)


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, np.generic):
        return _clean(v.item())
    return v


def write_jsonl(record: EpochDiagnostics, path):
    """Append one record; non-finite numbers become null."""
    line = json.dumps({k: _clean(v) for k, v in record.to_dict().items()})
    with Path(path).open("a") as fh:
        fh.write(line + "\n")
        fh.flush()


def read_jsonl(path) -> list[EpochDiagnostics]:
    out = []
    with Path(path).open() as fh:
        for line in fh:
            if line.strip():
                out.append(EpochDiagnostics.from_dict(json.loads(line)))
    return out
