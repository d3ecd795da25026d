"""Training configuration: loss weights, schedule, ablation switches.

Config files are flat ``key = value`` text. Every key must name a known
field; unknown keys are rejected so a snapshot always reproduces the run
that wrote it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

ABLATIONS = ("full", "conv", "conv_res", "oricla")

DEFAULT_CELEBA_ATTRIBUTES = [
    "Bald",
    "Bangs",
    "Black_Hair",
    "Blond_Hair",
    "Brown_Hair",
    "Bushy_Eyebrows",
    "Eyeglasses",
    "Male",
    "Mouth_Slightly_Open",
    "Mustache",
    "No_Beard",
    "Pale_Skin",
    "Young",
]


class ConfigError(ValueError):
    """Raised for malformed config files, unknown keys, or invalid values."""


@dataclass
class LossWeights:
    """Objective trade-off weights and the two gradient-penalty scales."""

    lambda0: float = 4.0
    lambda1: float = 3.0
    lambda2: float = 1.0
    lambda3: float = 20.0
    lambda4: float = 1.0
    gp_critic: float = 10.0
    gp_classifier: float = 30.0

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("lambda") and v < 0:
                raise ConfigError(f"{f.name} must be non-negative, got {v}")


@dataclass
class TrainingConfig:
    loss_weights: LossWeights = field(default_factory=LossWeights)
    lr_initial: float = 2e-4
    epochs_flat: int = 10
    epochs_decay: int = 10
    batch_size: int = 16
    n_critic: int = 5
    seed: int = 0
    ablation: str = "full"
    resolution: int = 128
    attribute_names: list[str] = field(
        default_factory=lambda: list(DEFAULT_CELEBA_ATTRIBUTES)
    )
    base_channels: int = 64
    test_count: int = 2000
    one_sided_classifier_loss: bool = False
    gen_wants_separable: bool = True

    @property
    def n_attributes(self) -> int:
        return len(self.attribute_names)

    @property
    def total_epochs(self) -> int:
        return self.epochs_flat + self.epochs_decay

    def validate(self) -> None:
        self.loss_weights.validate()
        if self.ablation not in ABLATIONS:
            raise ConfigError(
                f"ablation must be one of {ABLATIONS}, got {self.ablation!r}"
            )
        if self.n_attributes < 1:
            raise ConfigError("at least one attribute name is required")
        if len(set(self.attribute_names)) != self.n_attributes:
            raise ConfigError("attribute_names contains duplicates")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.n_critic < 1:
            raise ConfigError("n_critic must be positive")
        if self.resolution < 32 or self.resolution % 32 != 0:
            raise ConfigError(
                "resolution must be a positive multiple of 32, got "
                f"{self.resolution}"
            )
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if self.epochs_flat < 0 or self.epochs_decay < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.lr_initial <= 0:
            raise ConfigError("lr_initial must be positive")
        if self.test_count < 0:
            raise ConfigError("test_count must be non-negative")


_WEIGHT_KEYS = {f.name for f in fields(LossWeights)}
_TOP_KEYS = {f.name: f for f in fields(TrainingConfig) if f.name != "loss_weights"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _WEIGHT_KEYS:
        return float(raw)
    f = _TOP_KEYS[key]
    if f.type in ("int", int):
        return int(raw)
    if f.type in ("float", float):
        return float(raw)
    if f.type in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean value {raw!r} for key {key!r}")
    if key == "attribute_names":
        names = [n.strip() for n in raw.split(",") if n.strip()]
        return names
    return raw


def set_config_key(config: TrainingConfig, key: str, raw_value: str) -> None:
    """Assign one flat ``key = value`` pair onto a config, in place."""
    if key in _WEIGHT_KEYS:
        setattr(config.loss_weights, key, _parse_value(key, raw_value))
    elif key in _TOP_KEYS:
        setattr(config, key, _parse_value(key, raw_value))
    else:
        raise ConfigError(f"unknown config key {key!r}")


def parse_config_text(text: str) -> TrainingConfig:
    config = TrainingConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        try:
            set_config_key(config, key.strip(), value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    config.validate()
    return config


def load_config(path) -> TrainingConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_to_text(config: TrainingConfig) -> str:
    """Serialize to the flat config format; parse(serialize(c)) == c."""
    lines = []
    for f in fields(TrainingConfig):
        if f.name == "loss_weights":
            continue
        v = getattr(config, f.name)
        if f.name == "attribute_names":
            v = ",".join(v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    for f in fields(LossWeights):
        lines.append(f"{f.name} = {getattr(config.loss_weights, f.name)!r}")
    return "\n".join(lines) + "\n"


def apply_overrides(config: TrainingConfig, overrides: list[str]) -> TrainingConfig:
    """Apply ``key=value`` override strings, then revalidate."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        set_config_key(config, key.strip(), value)
    config.validate()
    return config


def config_hash(config: TrainingConfig) -> str:
    return hashlib.sha256(config_to_text(config).encode("utf-8")).hexdigest()
