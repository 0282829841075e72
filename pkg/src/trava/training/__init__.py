"""Losses, template fitting, config parsing, and the optimization loop."""

from .config import (LossWeights, TrainConfig, config_items, load_config,
                     parse_config, save_config)
from .fit import MeshAlignment, fit_initial_mesh
from .losses import PatchDiscriminator, PerceptualExtractor, loss_image, loss_reg
from .trainer import LOG_COLUMNS, Trainer, train

__all__ = [
    "LOG_COLUMNS",
    "LossWeights",
    "MeshAlignment",
    "PatchDiscriminator",
    "PerceptualExtractor",
    "TrainConfig",
    "Trainer",
    "config_items",
    "fit_initial_mesh",
    "load_config",
    "loss_image",
    "loss_reg",
    "parse_config",
    "save_config",
    "train",
]
