"""Parameterised building blocks for the teacher and the student."""

from __future__ import annotations

import math
from typing import Callable, Dict, Iterator, Optional, Tuple

import numpy as np

from .core import (
    Tensor,
    conv2d,
    global_avg_pool,
    group_norm,
    hardswish,
    layer_norm,
    linear,
    matmul,
    relu,
    scale_channels,
    sigmoid,
    softmax,
)
from .errors import ConfigError, DimensionError

# Called as hook(name, activation) after every weighted layer; returns the
# (possibly fake-quantised) activation to continue with.
ActHook = Optional[Callable[[str, Tensor], Tensor]]


def _tap(hook: ActHook, name: str, x: Tensor) -> Tensor:
    return hook(name, x) if hook is not None else x


def param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Minimal parameter container; attributes are walked in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(f"state dict mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def _he(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, gain: float = 1.0):
        self.weight = param(_he(rng, (n_in, n_out), n_in) * gain)
        self.bias = param(np.zeros(n_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, groups=1, bias=True):
        if c_in % groups or c_out % groups:
            raise ConfigError(f"Conv2d: channels {c_in}->{c_out} not divisible by groups {groups}")
        fan_in = c_in // groups * kernel * kernel
        self.weight = param(_he(rng, (c_out, c_in // groups, kernel, kernel), fan_in))
        self.bias = param(np.zeros(c_out)) if bias else None
        self._stride, self._padding, self._groups = stride, padding, groups

    @property
    def stride(self) -> int:
        return self._stride

    @property
    def padding(self) -> int:
        return self._padding

    @property
    def groups(self) -> int:
        return self._groups

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self._stride, self._padding, self._groups)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.weight = param(np.ones(dim))
        self.bias = param(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.weight, self.bias)


class GroupNorm(Module):
    """Group normalisation with a single group (no running statistics)."""

    def __init__(self, channels: int):
        self.weight = param(np.ones(channels))
        self.bias = param(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return group_norm(x, self.weight, self.bias)


class PatchEmbed(Module):
    """Non-overlapping patch projection: (B, C, H, W) -> (B, N_p, dim)."""

    def __init__(self, patch: int, dim: int, rng: np.random.Generator, in_ch: int = 3):
        if patch < 1 or dim < 1:
            raise ConfigError(f"PatchEmbed: patch and dim must be positive, got {patch}, {dim}")
        self.proj = Conv2d(in_ch, dim, patch, rng, stride=patch)
        self._patch = patch

    @property
    def patch(self) -> int:
        return self._patch

    def num_patches(self, h: int, w: int) -> int:
        if h % self._patch or w % self._patch:
            raise ConfigError(f"image {h}x{w} is not divisible by patch size {self._patch}")
        return (h // self._patch) * (w // self._patch)

    def forward(self, image: Tensor, hook: ActHook = None) -> Tensor:
        b, _, h, w = image.shape
        n = self.num_patches(h, w)
        y = _tap(hook, "patch_embed", self.proj(image))
        d = y.shape[1]
        return y.reshape(b, d, n).transpose(0, 2, 1)


def patch_embed(image: Tensor, patch: int, dim: int, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Functional form with freshly initialised weights (mostly useful in tests)."""
    return PatchEmbed(patch, dim, rng or np.random.default_rng(0), in_ch=image.shape[1])(image)


class WindowAttentionBlock(Module):
    """Pre-norm transformer block whose single window spans the whole patch grid.

    ``forward`` returns the updated tokens and the post-softmax attention
    weights of shape (B, n_heads, N_p, N_p).
    """

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, mlp_ratio: int = 4):
        if dim % n_heads:
            raise ConfigError(f"attention dim {dim} is not divisible by {n_heads} heads")
        self.norm1 = LayerNorm(dim)
        self.q = Linear(dim, dim, rng, gain=math.sqrt(0.5))
        self.k = Linear(dim, dim, rng, gain=math.sqrt(0.5))
        self.v = Linear(dim, dim, rng, gain=math.sqrt(0.5))
        self.proj = Linear(dim, dim, rng, gain=math.sqrt(0.5))
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, dim * mlp_ratio, rng)
        self.fc2 = Linear(dim * mlp_ratio, dim, rng, gain=math.sqrt(0.5))
        self._dim, self._heads = dim, n_heads

    @property
    def n_heads(self) -> int:
        return self._heads

    def window_attention(self, tokens: Tensor, hook: ActHook = None, prefix: str = "") -> Tuple[Tensor, Tensor]:
        b, n, d = tokens.shape
        if d != self._dim:
            raise DimensionError(f"attention block expects dim {self._dim}, got {d}")
        h = self._heads
        dh = d // h

        def heads(t):
            return t.reshape(b, n, h, dh).transpose(0, 2, 1, 3)

        q = heads(_tap(hook, prefix + "q", self.q(tokens)))
        k = heads(_tap(hook, prefix + "k", self.k(tokens)))
        v = heads(_tap(hook, prefix + "v", self.v(tokens)))
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        attn = softmax(scores, axis=-1)
        ctx = matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return _tap(hook, prefix + "proj", self.proj(ctx)), attn

    def forward(self, tokens: Tensor, hook: ActHook = None, prefix: str = "") -> Tuple[Tensor, Tensor]:
        a, attn = self.window_attention(self.norm1(tokens), hook, prefix)
        x = tokens + a
        hdn = relu(_tap(hook, prefix + "fc1", self.fc1(self.norm2(x))))
        x = x + _tap(hook, prefix + "fc2", self.fc2(hdn))
        return x, attn


class SqueezeExcitation(Module):
    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"SE: channels {channels} not divisible by reduction {reduction}")
        self.fc1 = Linear(channels, channels // reduction, rng)
        self.fc2 = Linear(channels // reduction, channels, rng)

    def gate(self, features: Tensor, hook: ActHook = None, prefix: str = "") -> Tensor:
        s = global_avg_pool(features)
        s = relu(_tap(hook, prefix + "se_fc1", self.fc1(s)))
        return sigmoid(_tap(hook, prefix + "se_fc2", self.fc2(s)))

    def forward(self, features: Tensor, hook: ActHook = None, prefix: str = "") -> Tensor:
        return scale_channels(features, self.gate(features, hook, prefix))


def squeeze_excitation(features: Tensor, reduction: int, rng: Optional[np.random.Generator] = None) -> Tensor:
    return SqueezeExcitation(features.shape[1], reduction, rng or np.random.default_rng(0))(features)


class DepthwiseSeparableBlock(Module):
    """Depthwise 3x3 -> norm -> act -> SE -> pointwise 1x1 -> norm -> act."""

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator,
                 se_reduction: Optional[int] = 4, activation: str = "hardswish"):
        self.dw = Conv2d(c_in, c_in, 3, rng, stride=stride, padding=1, groups=c_in, bias=False)
        self.norm_dw = GroupNorm(c_in)
        self.se = SqueezeExcitation(c_in, se_reduction, rng) if se_reduction else None
        self.pw = Conv2d(c_in, c_out, 1, rng, bias=False)
        self.norm_pw = GroupNorm(c_out)
        self._act = {"hardswish": hardswish, "relu": relu}[activation]

    def depthwise(self, x: Tensor) -> Tensor:
        return self.dw(x)

    def forward(self, x: Tensor, hook: ActHook = None, prefix: str = "") -> Tensor:
        y = _tap(hook, prefix + "dw", self.dw(x))
        y = self._act(self.norm_dw(y))
        if self.se is not None:
            y = self.se(y, hook, prefix)
        y = _tap(hook, prefix + "pw", self.pw(y))
        return self._act(self.norm_pw(y))
