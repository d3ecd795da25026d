"""ClsGAN: selective facial attribute editing with a dual-encoder
generator, a weighted-residual upconvolution decoder, and an
attribute-adversarial classifier sharing a trunk with a WGAN-GP critic.
"""

from .config import (
    ABLATIONS,
    DEFAULT_CELEBA_ATTRIBUTES,
    ConfigError,
    LossWeights,
    TrainingConfig,
    load_config,
    parse_config_text,
)
from .critic import AttaClsCritic, make_targets
from .generator import ClsGanGenerator, ContentEncoder, AttributeEncoder, TrBlock
from .trainer import Trainer, TrainingDivergedError, lr_at, load_generator, train

__all__ = [
    "ABLATIONS",
    "DEFAULT_CELEBA_ATTRIBUTES",
    "ConfigError",
    "LossWeights",
    "TrainingConfig",
    "load_config",
    "parse_config_text",
    "AttaClsCritic",
    "make_targets",
    "ClsGanGenerator",
    "ContentEncoder",
    "AttributeEncoder",
    "TrBlock",
    "Trainer",
    "TrainingDivergedError",
    "lr_at",
    "load_generator",
    "train",
]

__version__ = "0.1.0"
