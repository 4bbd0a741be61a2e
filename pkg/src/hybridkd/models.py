"""Desk-scale teacher (TinyWin) and student (TinyMobile).

The teacher exposes the attention map of its first window-attention block;
the student exposes the feature map of its final depthwise-separable block.
Both models standardise raw [0, 1] pixels internally.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from .core import Tensor, add_batch_bias, global_avg_pool, relu
from .errors import ConfigError, DimensionError
from .layers import (
    ActHook,
    Conv2d,
    DepthwiseSeparableBlock,
    GroupNorm,
    LayerNorm,
    Linear,
    Module,
    PatchEmbed,
    WindowAttentionBlock,
    _tap,
    param,
)

PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


def standardize(x: Tensor) -> Tensor:
    return (x - PIXEL_MEAN) * (1.0 / PIXEL_STD)


def _check_input(x: Tensor, size: int) -> None:
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (size, size):
        raise DimensionError(f"expected input (B, 3, {size}, {size}), got {x.shape}")


@dataclass
class TeacherConfig:
    image_size: int = 64
    patch: int = 8
    dim: int = 64
    depth: int = 2
    n_heads: int = 4
    mlp_ratio: int = 6
    head_hidden: int = 128
    n_classes: int = 8
    arch: str = "teacher"


@dataclass
class StudentConfig:
    image_size: int = 64
    stem: int = 16
    widths: List[int] = field(default_factory=lambda: [24, 48, 96])
    strides: List[int] = field(default_factory=lambda: [2, 2, 1])
    se_reduction: int = 4
    n_classes: int = 8
    arch: str = "student"


class TeacherModel(Module):
    def __init__(self, cfg: TeacherConfig = None, seed: int = 0):
        cfg = cfg or TeacherConfig()
        if cfg.image_size % cfg.patch:
            raise ConfigError(f"image size {cfg.image_size} not divisible by patch {cfg.patch}")
        rng = np.random.default_rng(seed)
        self._cfg = cfg
        n_p = (cfg.image_size // cfg.patch) ** 2
        self.embed = PatchEmbed(cfg.patch, cfg.dim, rng)
        self.pos = param(rng.normal(0.0, 0.02, size=(n_p, cfg.dim)))
        self.blocks = [WindowAttentionBlock(cfg.dim, cfg.n_heads, rng, cfg.mlp_ratio) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.dim)
        self.head1 = Linear(cfg.dim, cfg.head_hidden, rng)
        self.head2 = Linear(cfg.head_hidden, cfg.n_classes, rng)
        self._frozen = False

    @property
    def config(self) -> TeacherConfig:
        return self._cfg

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> None:
        super().freeze()
        self._frozen = True

    def forward(self, x: Tensor, hook: ActHook = None) -> Tuple[Tensor, Tensor]:
        """Return (logits (B, C), attention of block 1 (B, N_h, N_p, N_p))."""
        _check_input(x, self._cfg.image_size)
        t = add_batch_bias(self.embed(standardize(x), hook), self.pos)
        first_attn = None
        for i, blk in enumerate(self.blocks):
            t, attn = blk(t, hook, f"blocks.{i}.")
            if first_attn is None:
                first_attn = attn
        pooled = self.norm(t).mean(axis=1)
        h = relu(_tap(hook, "head1", self.head1(pooled)))
        return _tap(hook, "head2", self.head2(h)), first_attn


class StudentModel(Module):
    def __init__(self, cfg: StudentConfig = None, seed: int = 0):
        cfg = cfg or StudentConfig()
        if len(cfg.widths) != len(cfg.strides):
            raise ConfigError("student widths and strides must have the same length")
        rng = np.random.default_rng(seed)
        self._cfg = cfg
        self.stem = Conv2d(3, cfg.stem, 3, rng, stride=2, padding=1, bias=False)
        self.stem_norm = GroupNorm(cfg.stem)
        c = cfg.stem
        blocks = []
        for width, stride in zip(cfg.widths, cfg.strides):
            blocks.append(DepthwiseSeparableBlock(c, width, stride, rng, cfg.se_reduction or None))
            c = width
        self.blocks = blocks
        self.head = Linear(c, cfg.n_classes, rng)

    @property
    def config(self) -> StudentConfig:
        return self._cfg

    @property
    def feature_channels(self) -> int:
        return self._cfg.widths[-1]

    def feature_size(self) -> int:
        size = self._cfg.image_size
        size = (size + 2 - 3) // 2 + 1
        for s in self._cfg.strides:
            size = (size + 2 - 3) // s + 1
        return size

    def forward(self, x: Tensor, hook: ActHook = None) -> Tuple[Tensor, Tensor]:
        """Return (logits (B, C), final feature map (B, C_S, H_S, W_S))."""
        _check_input(x, self._cfg.image_size)
        y = _tap(hook, "stem", self.stem(standardize(x)))
        y = relu(self.stem_norm(y))
        for i, blk in enumerate(self.blocks):
            y = blk(y, hook, f"blocks.{i}.")
        logits = _tap(hook, "head", self.head(global_avg_pool(y)))
        return logits, y


def teacher_forward(model: TeacherModel, x: Tensor) -> Tuple[Tensor, Tensor]:
    return model(x)


def student_forward(model: StudentModel, x: Tensor) -> Tuple[Tensor, Tensor]:
    return model(x)


# -- descriptors --------------------------------------------------------------------


def describe(model: Module) -> Dict[str, Any]:
    return asdict(model.config)


def build_model(descriptor: Dict[str, Any], seed: int = 0) -> Module:
    d = dict(descriptor)
    arch = d.pop("arch", None)
    if arch == "teacher":
        return TeacherModel(TeacherConfig(**d), seed=seed)
    if arch == "student":
        return StudentModel(StudentConfig(**d), seed=seed)
    raise ConfigError(f"unknown architecture {arch!r}")


def parameters_checksum(model: Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(p.data.tobytes())
    return h.hexdigest()
