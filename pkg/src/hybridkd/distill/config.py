from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict

from ..errors import ConfigError

MODES = {
    "none": (False, False),
    "logit": (True, False),
    "attn": (False, True),
    "hybrid": (True, True),
}


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class DistillConfig:
    """Training settings: batch 32, AdamW, tau 6, alpha 0.7, beta 0.3, 60 epochs."""

    tau: float = 6.0
    alpha: float = 0.7
    beta: float = 0.3
    batch_size: int = 32
    epochs: int = 60
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    early_stop_patience: int = 8
    common_channels: int = 32
    seed: int = 0
    augment: bool = True
    cache_teacher: bool = False
    train_teacher_adapter: bool = True
    teacher_loss: str = "focal"
    focal_gamma: float = 2.0

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = AdamWConfig(**self.optimizer)
        self.validate()

    def validate(self) -> None:
        if self.tau < 1e-6:
            raise ConfigError(f"tau must be >= 1e-6, got {self.tau}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"alpha and beta must be non-negative, got {self.alpha}, {self.beta}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.common_channels < 1:
            raise ConfigError("common_channels must be >= 1")
        if self.teacher_loss not in ("focal", "ce"):
            raise ConfigError(f"teacher_loss must be 'focal' or 'ce', got {self.teacher_loss!r}")

    def with_mode(self, mode: str) -> "DistillConfig":
        """Mask (alpha, beta) for one of the ablation modes."""
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; choose from {sorted(MODES)}")
        use_logit, use_attn = MODES[mode]
        return self.replace(alpha=self.alpha if use_logit else 0.0, beta=self.beta if use_attn else 0.0)

    def replace(self, **changes) -> "DistillConfig":
        d = self.to_dict()
        d.update(changes)
        return DistillConfig.from_dict(d)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "DistillConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown DistillConfig keys: {sorted(unknown)}")
        return cls(**d)
