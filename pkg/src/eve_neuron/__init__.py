"""Variational distributional neurons with homeostatic mu^2 bands and AR latent dynamics."""

from .gaussian import kl_gaussian, kl_std_normal, reparameterize
from .layer import EveLayer
from .config import RunConfig, load_config
from .trainer import Trainer, train_run

__all__ = ["EveLayer", "RunConfig", "Trainer", "kl_gaussian", "kl_std_normal", "load_config",
           "reparameterize", "train_run"]
