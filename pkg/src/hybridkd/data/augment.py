"""Training-time augmentation for (3, H, W) float images in [0, 1]."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage


@dataclass
class AugmentConfig:
    right_angles: bool = True
    max_angle: float = 15.0
    hflip: float = 0.5
    vflip: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    noise_std: float = 0.02

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def to_dict(self):
        return asdict(self)


def augment(image: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = None) -> np.ndarray:
    """Return a randomly transformed copy of ``image``; the input is never modified."""
    cfg = cfg or AugmentConfig()
    x = np.array(image, dtype=np.float32, copy=True)
    if cfg.right_angles:
        x = np.rot90(x, k=int(rng.integers(4)), axes=(1, 2))
    if cfg.max_angle > 0:
        angle = rng.uniform(-cfg.max_angle, cfg.max_angle)
        x = ndimage.rotate(x, angle, axes=(2, 1), reshape=False, order=1, mode="reflect")
    if cfg.hflip > 0 and rng.random() < cfg.hflip:
        x = x[:, :, ::-1]
    if cfg.vflip > 0 and rng.random() < cfg.vflip:
        x = x[:, ::-1, :]
    if cfg.brightness > 0:
        x = x * rng.uniform(1 - cfg.brightness, 1 + cfg.brightness)
    if cfg.contrast > 0:
        m = x.mean()
        x = (x - m) * rng.uniform(1 - cfg.contrast, 1 + cfg.contrast) + m
    if cfg.saturation > 0:
        gray = x.mean(axis=0, keepdims=True)
        x = (x - gray) * rng.uniform(1 - cfg.saturation, 1 + cfg.saturation) + gray
    if cfg.noise_std > 0:
        x = x + rng.normal(0.0, cfg.noise_std, size=x.shape)
    return np.ascontiguousarray(np.clip(x, 0.0, 1.0), dtype=np.float32)


def make_augmenter(cfg: AugmentConfig = None):
    cfg = cfg or AugmentConfig()
    return lambda img, rng: augment(img, rng, cfg)
