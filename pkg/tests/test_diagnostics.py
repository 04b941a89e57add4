import math

import numpy as np
import pytest

from eve_neuron.diagnostics import (
    DiagConfig,
    EpochDiagnostics,
    collect,
    flag_regimes,
    read_jsonl,
    write_jsonl,
)


def _hist(n, **fields):
    return [EpochDiagnostics(e, "val", **{k: (v(e) if callable(v) else v) for k, v in fields.items()})
            for e in range(1, n + 1)]


def test_collect_weighted_means_and_out_identity():
    batches = [(2, {"mse": 1.0, "frac_low": 0.25, "frac_high": 0.5, "kl_mean": 0.2}),
               (6, {"mse": 3.0, "frac_low": 0.0, "frac_high": 0.25, "kl_mean": 0.4})]
    rec = collect(batches, 3, "train", clamps=[(0.1, 0.0), (0.3, 0.2)], nudges=2)
    assert rec.mse == 2.5
    assert rec.out == rec.frac_low + rec.frac_high
    assert rec.clamp_low == pytest.approx(0.2) and rec.clamp_high == pytest.approx(0.1)
    assert rec.zero_mu2_nudges == 2


def test_collect_baseline_leaves_latent_fields_null():
    rec = collect([(4, {"mse": 1.0, "mae": 0.5})], 1, "val")
    assert rec.kl_mean is None and rec.out is None and rec.mse == 1.0


def test_collect_counts_nonfinite():
    rec = collect([(1, {"mse": math.nan}), (1, {"mse": 2.0})], 1, "val")
    assert rec.mse == 2.0 and rec.n_nonfinite_events == 1
    with pytest.raises(ValueError):
        collect([], 1, "val")
    with pytest.raises(ValueError):
        collect([(1, {})], 1, "holdout")


def test_flags_healthy():
    h = _hist(12, kl_eff=0.3, frac_low=0.1, frac_high=0.1, mu2_mean=0.1)
    f = flag_regimes(h)
    assert not (f.collapsed or f.saturated or f.drifting)


def test_flags_collapse_and_saturation():
    assert flag_regimes(_hist(3, kl_eff=0.0, frac_low=1.0, frac_high=0.0)).collapsed
    assert flag_regimes(_hist(3, kl_eff=0.5, frac_low=0.0, frac_high=0.95)).saturated


def test_drift_slope_oracle():
    h = _hist(10, mu2_mean=lambda e: 0.01 * e)
    f = flag_regimes(h, DiagConfig(drift_threshold=0.005))
    assert f.drifting
    x = np.arange(10.0)
    y = 0.01 * (x + 1)
    slope = np.polyfit(x, y, 1)[0]
    assert f.drift_slope == pytest.approx(slope, rel=1e-10)


def test_jsonl_roundtrip_and_nulls(tmp_path):
    p = tmp_path / "h.jsonl"
    a = EpochDiagnostics(1, "train", mse=0.5, kl_mean=0.25, out=0.0)
    b = EpochDiagnostics(1, "val", mse=0.75)
    c = EpochDiagnostics(2, "val", mse=math.inf)
    for r in (a, b, c):
        write_jsonl(r, p)
    back = read_jsonl(p)
    assert back[0] == a and back[1] == b
    assert back[1].kl_mean is None and back[2].mse is None
    assert '"kl_mean": null' in p.read_text().splitlines()[1]
