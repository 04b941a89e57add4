"""Training loop: global loss, Adam with clipping, regime control, checkpoint selection."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .ar import phi_from_tau, sample_taus
from .config import RunConfig
from .controllers import beta_schedule, estimate_mu2, out_fraction, project_units, sample_bands
from .data import WindowedTask, build_task, persistence_baseline
from .diagnostics import EpochDiagnostics, collect, flag_regimes, write_jsonl
from .layer import EveLayer
from .objective import ObjectiveContext, evaluate_batch
from .optim import Adam

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "eve-checkpoint/1"


class TrainingAborted(RuntimeError):
    pass


@dataclass
class Checkpoint:
    params: dict
    epoch: int
    val_score: float
    val_mse: float
    diagnostics: EpochDiagnostics


def composite_score(val_mse: float, diag: EpochDiagnostics | None, lambda_out: float,
                    lambda_band: float) -> float:
    """Validation MSE plus weighted out-of-band fraction and band penalty.

    Latent terms that are absent (deterministic baseline) contribute nothing.
    """
    score = val_mse
    if diag is not None and diag.out is not None:
        score += lambda_out * diag.out
    if diag is not None and diag.band_penalty is not None:
        score += lambda_band * diag.band_penalty
    return score


def _finite_grads(grads: dict) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())


class Trainer:
    """One (config, seed) run. Can be advanced epoch by epoch and pickled between calls."""

    def __init__(self, cfg: RunConfig, task: WindowedTask, log_path=None, record_steps=False):
        self.cfg = cfg
        self.task = task
        self.log_path = Path(log_path) if log_path else None
        ss = np.random.SeedSequence(cfg.train.seed)
        init_ss, band_ss, tau_ss, batch_ss, noise_ss = ss.spawn(5)
        m = cfg.model
        n_out = task.horizon * task.n_channels
        self.layer = EveLayer.init(
            m.n_units, task.n_channels, n_out, np.random.default_rng(init_ss), temporal=True,
            stochastic=m.kind == "eve", init_scale=m.init_scale, readout_scale=m.readout_scale,
            sigma_init=m.sigma_init, freeze_sigma=m.freeze_sigma, sigma_floor=m.sigma_floor)
        self.bands = sample_bands(cfg.control, m.n_units, np.random.default_rng(band_ss))
        self.taus = sample_taus(cfg.ar, m.n_units, np.random.default_rng(tau_ss))
        self.phi = phi_from_tau(self.taus)
        self.ctx = ObjectiveContext(cfg.control, cfg.ar, self.bands, self.phi,
                                    beta=cfg.train.beta, kl_tau=cfg.diag.kl_tau)
        self.batch_rng = np.random.default_rng(batch_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.opt = Adam(cfg.train.lr, clip=cfg.train.grad_clip_norm)
        self.history: list[EpochDiagnostics] = []
        self.best: Checkpoint | None = None
        self.epoch = 0
        self.step = 0
        self.bad_epochs = 0
        self.stopped = False
        self.consecutive_nonfinite = 0
        self.step_log: list[dict] | None = [] if record_steps else None

    @property
    def is_latent(self) -> bool:
        return self.layer.stochastic

    @property
    def done(self) -> bool:
        return self.stopped or self.epoch >= self.cfg.train.max_epochs

    def _log(self, rec: EpochDiagnostics):
        self.history.append(rec)
        if self.log_path is not None:
            write_jsonl(rec, self.log_path)

    def _train_step(self, xb, yb, batches, clamps):
        tc = self.cfg.train
        self.ctx.beta = beta_schedule(self.step, tc.beta, tc.warmup_steps)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                res = evaluate_batch(self.layer, xb, yb, self.ctx, train=True, rng=self.noise_rng)
            ok = math.isfinite(res.terms.total) and _finite_grads(res.grads)
        except (FloatingPointError, ValueError) as e:
            if "non-finite" not in str(e):
                raise
            res, ok = None, False
        self.step += 1
        if not ok:
            self.consecutive_nonfinite += 1
            log.warning("non-finite loss at step %d; update skipped", self.step)
            if self.consecutive_nonfinite > tc.max_nonfinite:
                raise TrainingAborted(f"more than {tc.max_nonfinite} consecutive non-finite steps")
            return 1
        self.consecutive_nonfinite = 0
        batches.append((len(xb), res.stats))
        params = self.layer.params()
        names = self.layer.trainable()
        self.opt.step({n: params[n] for n in names}, {n: res.grads[n] for n in names})
        entry = None
        if self.step_log is not None:
            entry = {"step": self.step, "total": res.terms.total, **res.terms.components(),
                     "constraint_energy": res.stats.get("constraint_energy"),
                     "out": res.stats.get("out"), "frac_low": res.stats.get("frac_low"),
                     "frac_high": res.stats.get("frac_high"),
                     "kl_mean": res.stats.get("kl_mean"), "kl_eff": res.stats.get("kl_eff")}
        if self.is_latent and self.cfg.control.regime == "projON":
            est = estimate_mu2(self.layer.encode(xb))
            rep = project_units(self.layer, est, self.bands)
            clamps.append((rep.clamp_low, rep.clamp_high, rep.nudged))
            if entry is not None:
                entry["out_after_projection"] = out_fraction(estimate_mu2(self.layer.encode(xb)), self.bands)[2]
        if entry is not None:
            self.step_log.append(entry)
        return 0

    def evaluate(self, split: str, epoch: int, layer: EveLayer | None = None) -> EpochDiagnostics:
        """Evaluation-mode pass (readout over mu) over a whole split."""
        layer = layer or self.layer
        data = getattr(self.task, split)
        bs = self.cfg.train.eval_batch_size
        diag_rng = np.random.default_rng([self.cfg.train.seed, epoch, ("train", "val", "test").index(split)])
        batches = []
        for i in range(0, len(data), bs):
            xb, yb = data.inputs[i:i + bs], data.targets[i:i + bs]
            with np.errstate(over="ignore", invalid="ignore"):
                res = evaluate_batch(layer, xb, yb, self.ctx, train=False, diag_rng=diag_rng, with_grads=False)
            batches.append((len(xb), res.stats))
        return collect(batches, epoch, split)

    def run_epoch(self):
        if self.done:
            return
        self.epoch += 1
        tr = self.task.train
        order = self.batch_rng.permutation(len(tr))
        bs = self.cfg.train.batch_size
        batches, clamps, nonfinite = [], [], 0
        for i in range(0, len(order), bs):
            idx = order[i:i + bs]
            nonfinite += self._train_step(tr.inputs[idx], tr.targets[idx], batches, clamps)
        if batches:
            train_rec = collect(batches, self.epoch, "train",
                                clamps=[c[:2] for c in clamps] or None,
                                nudges=sum(c[2] for c in clamps), nonfinite=nonfinite)
        else:
            train_rec = EpochDiagnostics(self.epoch, "train", n_nonfinite_events=nonfinite)
        if not self.is_latent:
            train_rec.n_nonfinite_events = nonfinite
        self._log(train_rec)
        val_rec = self.evaluate("val", self.epoch)
        self._log(val_rec)
        tc = self.cfg.train
        if val_rec.mse is None or not math.isfinite(val_rec.mse):
            score = math.inf
        else:
            score = composite_score(val_rec.mse, val_rec, tc.select_lambda_out, tc.select_lambda_band)
        if (self.best is None and math.isfinite(score)) or (self.best is not None and score < self.best.val_score):
            self.best = Checkpoint(self.layer.snapshot(), self.epoch, score, val_rec.mse, val_rec)
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= tc.early_stop_patience:
                self.stopped = True

    def run_until(self, epoch: int):
        while not self.done and self.epoch < epoch:
            self.run_epoch()

    def run(self):
        while not self.done:
            self.run_epoch()
        if self.best is None:
            raise TrainingAborted("no epoch produced a finite validation score")

    def val_history(self) -> list[EpochDiagnostics]:
        return [r for r in self.history if r.split == "val"]

    def best_layer(self) -> EveLayer:
        layer = self.layer.copy()
        layer.load(self.best.params)
        return layer

    def test_record(self) -> EpochDiagnostics:
        return self.evaluate("test", self.best.epoch, self.best_layer())

    def report(self) -> dict:
        """Final test metrics at the validation-selected checkpoint."""
        test = self.test_record()
        self._log(test)
        p_mse, p_mae = persistence_baseline(self.task)
        flags = flag_regimes(self.val_history(), self.cfg.diag)
        return {
            "status": "ok",
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.train.seed,
            "model": self.cfg.model.kind,
            "regime": self.cfg.control.regime,
            "ar_mode": self.cfg.ar.mode,
            "epochs_run": self.epoch,
            "best_epoch": self.best.epoch,
            "val_score": self.best.val_score,
            "val_mse": self.best.val_mse,
            "test": test.to_dict(),
            "persistence": {"mse": p_mse, "mae": p_mae},
            "flags": {"collapsed": flags.collapsed, "saturated": flags.saturated,
                      "drifting": flags.drifting, "drift_slope": flags.drift_slope},
            "n_params": self.layer.n_params(),
        }

    def save_checkpoint(self, path):
        save_checkpoint(path, self.best, self.cfg, self.bands, self.phi)


def save_checkpoint(path, best: Checkpoint, cfg: RunConfig, bands=None, phi=None):
    """JSON checkpoint. Floats are written with repr precision, so loading is exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config_hash": cfg.hash(),
        "epoch": best.epoch,
        "val_score": best.val_score,
        "val_mse": best.val_mse,
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in best.params.items()},
    }
    if bands is not None:
        doc["bands"] = {"lower": bands.lower.tolist(), "upper": bands.upper.tolist()}
    if phi is not None:
        doc["phi"] = np.asarray(phi).tolist()
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an {CHECKPOINT_FORMAT} file")
    doc["params"] = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["params"].items()}
    return doc


def fit(task: WindowedTask, cfg: RunConfig, log_path=None):
    tr = Trainer(cfg, task, log_path)
    tr.run()
    return tr.best, tr.history


def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


def train_run(cfg: RunConfig, out_dir, task: WindowedTask | None = None, labels: dict | None = None) -> dict:
    """Full run with artifacts: run_meta.json, history.jsonl, checkpoint.json, test_report.json.

    ``labels`` (e.g. ablation cell names) are stored in run_meta.json for later grouping.

    Raises TrainingAborted after writing failure.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    task = task if task is not None else build_task(cfg.data)
    hist = out / "history.jsonl"
    if hist.exists():
        hist.unlink()
    tr = Trainer(cfg, task, hist)
    _dump(out / "run_meta.json", {
        "config": cfg.to_dict(), "config_hash": cfg.hash(), "seed": cfg.train.seed,
        "labels": labels or {},
        "bands": {"lower": tr.bands.lower.tolist(), "upper": tr.bands.upper.tolist()},
        "taus": tr.taus.tolist(), "n_params": tr.layer.n_params(),
        "task": {"in_len": task.in_len, "horizon": task.horizon, "channels": task.channel_names,
                 "boundaries": task.boundaries},
    })
    try:
        tr.run()
    except TrainingAborted as e:
        _dump(out / "failure.json", {"status": "failed", "reason": str(e), "epoch": tr.epoch, "step": tr.step})
        raise
    tr.save_checkpoint(out / "checkpoint.json")
    report = tr.report()
    _dump(out / "test_report.json", report)
    return report


ABLATION_REGIMES = ("homeo", "projON", "projOFF")


def ablation_cell_name(model: str, regime: str | None, ar: str | None) -> str:
    if model == "deterministic":
        return "deterministic"
    return f"{regime}_ar{ar}"


def fit_ablation_matrix(base: RunConfig, seeds=(0, 1, 2, 3, 4), regimes=ABLATION_REGIMES,
                        include_baseline: bool = True) -> list[dict]:
    """Expand a base config into the regime x AR x model grid.

    Every cell uses the same seed list and data. AR on means the base AR
    mode (penalty if the base has it off).
    """
    on_mode = base.ar.mode if base.ar.mode != "off" else "penalty"
    jobs = []
    for regime in regimes:
        for ar in ("on", "off"):
            for seed in seeds:
                cfg = RunConfig(
                    data=base.data, model=replace(base.model, kind="eve"),
                    control=replace(base.control, regime=regime),
                    ar=replace(base.ar, mode=on_mode if ar == "on" else "off"),
                    train=replace(base.train, seed=seed), diag=base.diag)
                jobs.append({"cell": ablation_cell_name("eve", regime, ar), "model": "eve",
                             "regime": regime, "ar": ar, "seed": seed, "config": cfg})
    if include_baseline:
        for seed in seeds:
            cfg = RunConfig(data=base.data, model=replace(base.model, kind="deterministic"),
                            control=base.control, ar=replace(base.ar, mode="off"),
                            train=replace(base.train, seed=seed), diag=base.diag)
            jobs.append({"cell": "deterministic", "model": "deterministic", "regime": None,
                         "ar": None, "seed": seed, "config": cfg})
    return jobs
