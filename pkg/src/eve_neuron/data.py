"""Time-series tasks: synthetic generators, CSV ingestion, windowing, naive baseline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

SYNTHETIC_KINDS = ("sines", "ar_latent", "regime_switch")


class DataError(ValueError):
    pass


@dataclass
class SeriesDataset:
    values: np.ndarray
    channel_names: list[str]
    params: dict = field(default_factory=dict)
    hidden: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass
class Split:
    inputs: np.ndarray
    targets: np.ndarray
    offsets: np.ndarray
    rows: tuple[int, int]

    def __len__(self):
        return len(self.inputs)


@dataclass
class WindowedTask:
    train: Split
    val: Split
    test: Split
    in_len: int
    horizon: int
    mean: np.ndarray
    std: np.ndarray
    channel_names: list[str]

    @property
    def n_channels(self) -> int:
        return len(self.mean)

    @property
    def boundaries(self) -> dict:
        return {"train": self.train.rows, "val": self.val.rows, "test": self.test.rows}


@dataclass
class DataConfig:
    source: str = "synthetic"
    kind: str = "ar_latent"
    path: str = ""
    time_column: str = "date"
    n_steps: int = 3000
    channels: int = 3
    noise: float = 1.0
    phi: float = 0.9
    sigma: float = 1.0
    seed: int = 1234
    in_len: int = 48
    horizon: int = 12
    train_frac: float = 0.7
    val_frac: float = 0.1


def gen_synthetic(kind: str, rng: np.random.Generator, n_steps: int = 3000, channels: int = 3,
                  noise: float = 1.0, phi: float = 0.9, sigma: float = 1.0) -> SeriesDataset:
    """Synthetic series with known generative structure.

    sines          sum of two sinusoids per channel plus white noise
    ar_latent      hidden AR(1) s_t = phi s_{t-1} + sigma e_t, observed as
                   x_c = load_c * s_t + noise * n_c
    regime_switch  AR(1) whose coefficient and level switch every segment
    """
    if kind not in SYNTHETIC_KINDS:
        raise DataError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if n_steps < 2 or channels < 1:
        raise DataError("need n_steps >= 2 and channels >= 1")
    t = np.arange(n_steps, dtype=float)
    names = [f"ch{c}" for c in range(channels)]
    params: dict = {"kind": kind, "n_steps": n_steps, "channels": channels, "noise": noise}
    hidden = None
    if kind == "sines":
        periods = rng.uniform(8.0, 64.0, size=(channels, 2))
        phases = rng.uniform(0.0, 2 * np.pi, size=(channels, 2))
        amps = rng.uniform(0.5, 1.5, size=(channels, 2))
        clean = np.sum(amps[None] * np.sin(2 * np.pi * t[:, None, None] / periods[None] + phases[None]), axis=2)
        values = clean + noise * rng.standard_normal((n_steps, channels))
        params.update(periods=periods.tolist(), phases=phases.tolist(), amplitudes=amps.tolist())
    elif kind == "ar_latent":
        if not abs(phi) < 1:
            raise DataError("ar_latent needs |phi| < 1")
        e = rng.standard_normal(n_steps)
        s = np.empty(n_steps)
        s[0] = sigma / math.sqrt(1 - phi * phi) * e[0]
        for i in range(1, n_steps):
            s[i] = phi * s[i - 1] + sigma * e[i]
        load = rng.uniform(0.5, 1.5, size=channels) * rng.choice([-1.0, 1.0], size=channels)
        values = s[:, None] * load[None] + noise * rng.standard_normal((n_steps, channels))
        hidden = s
        params.update(phi=phi, sigma=sigma, loadings=load.tolist())
    else:
        seg = 250
        n_seg = -(-n_steps // seg)
        phis = rng.choice([0.3, 0.95], size=n_seg)
        levels = rng.normal(0.0, 2.0, size=n_seg)
        load = rng.uniform(0.5, 1.5, size=channels)
        s = np.zeros(n_steps)
        e = rng.standard_normal(n_steps)
        for i in range(n_steps):
            k = i // seg
            prev = s[i - 1] if i else levels[0]
            s[i] = levels[k] + phis[k] * (prev - levels[k]) + sigma * e[i]
        values = s[:, None] * load[None] + noise * rng.standard_normal((n_steps, channels))
        hidden = s
        params.update(segment=seg, phis=phis.tolist(), levels=levels.tolist(), loadings=load.tolist())
    return SeriesDataset(values, names, params, hidden)


def _parse_time(cell: str):
    try:
        return float(cell)
    except ValueError:
        return datetime.fromisoformat(cell).timestamp()


def load_csv(path, time_column: str | None = "date", columns: list[str] | None = None) -> SeriesDataset:
    """Rectangular numeric CSV with a header row.

    ``time_column`` is validated to be strictly increasing (numbers or ISO
    dates) and dropped; pass None when the file has no time column. Errors
    name the 1-based data row (the header is not counted).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file (header row required)") from None
        if time_column is not None and time_column not in header:
            raise DataError(f"{path}: time column {time_column!r} not in header {header}")
        t_idx = header.index(time_column) if time_column is not None else None
        value_names = [h for i, h in enumerate(header) if i != t_idx]
        if columns is not None:
            missing = set(columns) - set(value_names)
            if missing:
                raise DataError(f"{path}: columns not found: {sorted(missing)}")
            value_names = list(columns)
        col_idx = [header.index(n) for n in value_names]
        rows, last_t = [], None
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            if t_idx is not None:
                try:
                    t = _parse_time(row[t_idx].strip())
                except ValueError:
                    raise DataError(f"{path}: row {row_no}: unparseable timestamp {row[t_idx]!r}") from None
                if last_t is not None and not t > last_t:
                    raise DataError(f"{path}: row {row_no}: timestamps not strictly increasing")
                last_t = t
            try:
                rows.append([float(row[i]) for i in col_idx])
            except ValueError:
                bad = next(row[i] for i in col_idx if not _is_float(row[i]))
                raise DataError(f"{path}: row {row_no}: non-numeric cell {bad!r}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(values)):
        r = int(np.argwhere(~np.isfinite(values))[0, 0]) + 1
        raise DataError(f"{path}: row {r}: non-finite value")
    return SeriesDataset(values, value_names, {"source": str(path)})


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_csv(ds: SeriesDataset, path, time_column: str = "date"):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([time_column, *ds.channel_names])
        for i, row in enumerate(ds.values):
            w.writerow([i, *(repr(float(v)) for v in row)])


def sliding_windows(values, in_len: int, horizon: int):
    """All stride-1 (input, target) pairs of a (T, C) array, with start offsets."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    n = values.shape[0] - in_len - horizon + 1
    if n < 1:
        raise DataError(f"series of length {values.shape[0]} is shorter than in_len + horizon = {in_len + horizon}")
    win = np.lib.stride_tricks.sliding_window_view(values, in_len + horizon, axis=0)
    win = np.moveaxis(win, -1, 1)
    return win[:, :in_len].copy(), win[:, in_len:].copy(), np.arange(n)


def min_length(in_len: int, horizon: int, fracs) -> int:
    """Shortest series that leaves at least one window in every split."""
    return max(math.ceil((in_len + horizon) / f) for f in fracs) + len(fracs)


def make_windows(ds: SeriesDataset, in_len: int, horizon: int, split_fracs=(0.7, 0.1, 0.2),
                 standardize: bool = True) -> WindowedTask:
    """Chronological split of the rows, then stride-1 windows inside each split.

    Windows never straddle a split boundary. Standardization statistics come
    from the train rows only.
    """
    if in_len < 1 or horizon < 1:
        raise DataError("in_len and horizon must be >= 1")
    fracs = tuple(float(f) for f in split_fracs)
    if len(fracs) != 3 or any(f <= 0 for f in fracs) or abs(sum(fracs) - 1) > 1e-9:
        raise DataError("split_fracs must be three positive fractions summing to 1")
    T = ds.n_steps
    need = min_length(in_len, horizon, fracs)
    if T < need:
        raise DataError(f"series too short: {T} rows, need at least {need} for in={in_len}, H={horizon}")
    a = int(round(T * fracs[0]))
    b = int(round(T * (fracs[0] + fracs[1])))
    bounds = [(0, a), (a, b), (b, T)]
    for lo, hi in bounds:
        if hi - lo < in_len + horizon:
            raise DataError(f"series too short: {T} rows, need at least {need} for in={in_len}, H={horizon}")
    train_rows = ds.values[:a]
    if standardize:
        mean = train_rows.mean(axis=0)
        std = train_rows.std(axis=0)
        if np.any(std <= 0):
            bad = [ds.channel_names[i] for i in np.flatnonzero(std <= 0)]
            raise DataError(f"constant channel(s) in train split: {bad}")
    else:
        mean = np.zeros(ds.n_channels)
        std = np.ones(ds.n_channels)
    scaled = (ds.values - mean) / std
    splits = []
    for lo, hi in bounds:
        x, y, off = sliding_windows(scaled[lo:hi], in_len, horizon)
        splits.append(Split(x, y, off + lo, (lo, hi)))
    return WindowedTask(*splits, in_len=in_len, horizon=horizon, mean=mean, std=std,
                        channel_names=list(ds.channel_names))


def persistence_baseline(task: WindowedTask, split: str = "test") -> tuple[float, float]:
    """Repeat the last observed value over the horizon; (MSE, MAE) on the split."""
    s = getattr(task, split)
    pred = np.repeat(s.inputs[:, -1:, :], task.horizon, axis=1)
    err = pred - s.targets
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


def build_dataset(cfg: DataConfig) -> SeriesDataset:
    if cfg.source == "synthetic":
        rng = np.random.default_rng(cfg.seed)
        return gen_synthetic(cfg.kind, rng, n_steps=cfg.n_steps, channels=cfg.channels,
                             noise=cfg.noise, phi=cfg.phi, sigma=cfg.sigma)
    if cfg.source == "csv":
        if not cfg.path:
            raise DataError("data.path is required for csv sources")
        return load_csv(cfg.path, cfg.time_column or None)
    raise DataError(f"unknown data.source {cfg.source!r}")


def build_task(cfg: DataConfig) -> WindowedTask:
    fracs = (cfg.train_frac, cfg.val_frac, 1.0 - cfg.train_frac - cfg.val_frac)
    return make_windows(build_dataset(cfg), cfg.in_len, cfg.horizon, fracs)
