"""Analytic parameter and FLOP counts from an architecture descriptor.

One multiply-accumulate is two FLOPs. Convolutions count
``2 * Kh * Kw * C_in / groups * C_out * H' * W'``, a linear layer ``2 * in * out``
per input vector, and attention adds the ``Q K^T`` and ``A V`` products.
Normalisation, activations, pooling and softmax are not counted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

from ..errors import ConfigError
from ..models import StudentConfig, TeacherConfig


@dataclass(frozen=True)
class LayerCount:
    name: str
    params: int
    flops: int


def conv_count(name, c_in, c_out, k, h_out, w_out, groups=1, bias=True) -> LayerCount:
    params = k * k * (c_in // groups) * c_out + (c_out if bias else 0)
    return LayerCount(name, params, 2 * k * k * (c_in // groups) * c_out * h_out * w_out)


def linear_count(name, n_in, n_out, tokens=1, bias=True) -> LayerCount:
    return LayerCount(name, n_in * n_out + (n_out if bias else 0), 2 * n_in * n_out * tokens)


def norm_count(name, channels) -> LayerCount:
    return LayerCount(name, 2 * channels, 0)


def _out(size, stride):
    return (size + 2 - 3) // stride + 1


def student_layers(cfg: StudentConfig) -> List[LayerCount]:
    rows = []
    s = _out(cfg.image_size, 2)
    rows.append(conv_count("stem", 3, cfg.stem, 3, s, s, bias=False))
    rows.append(norm_count("stem_norm", cfg.stem))
    c = cfg.stem
    for i, (width, stride) in enumerate(zip(cfg.widths, cfg.strides)):
        p = f"blocks.{i}."
        s = _out(s, stride)
        rows.append(conv_count(p + "dw", c, c, 3, s, s, groups=c, bias=False))
        rows.append(norm_count(p + "norm_dw", c))
        if cfg.se_reduction:
            r = c // cfg.se_reduction
            rows.append(linear_count(p + "se.fc1", c, r))
            rows.append(linear_count(p + "se.fc2", r, c))
        rows.append(conv_count(p + "pw", c, width, 1, s, s, bias=False))
        rows.append(norm_count(p + "norm_pw", width))
        c = width
    rows.append(linear_count("head", c, cfg.n_classes))
    return rows


def teacher_layers(cfg: TeacherConfig) -> List[LayerCount]:
    g = cfg.image_size // cfg.patch
    n, d = g * g, cfg.dim
    rows = [conv_count("embed.proj", 3, d, cfg.patch, g, g), LayerCount("pos", n * d, 0)]
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        rows.append(norm_count(p + "norm1", d))
        for proj in ("q", "k", "v"):
            rows.append(linear_count(p + proj, d, d, tokens=n))
        rows.append(LayerCount(p + "attn.scores", 0, 2 * n * n * d))
        rows.append(LayerCount(p + "attn.context", 0, 2 * n * n * d))
        rows.append(linear_count(p + "proj", d, d, tokens=n))
        rows.append(norm_count(p + "norm2", d))
        rows.append(linear_count(p + "fc1", d, d * cfg.mlp_ratio, tokens=n))
        rows.append(linear_count(p + "fc2", d * cfg.mlp_ratio, d, tokens=n))
    rows.append(norm_count("norm", d))
    rows.append(linear_count("head1", d, cfg.head_hidden))
    rows.append(linear_count("head2", cfg.head_hidden, cfg.n_classes))
    return rows


def layer_table(descriptor: Dict[str, Any]) -> List[LayerCount]:
    d = dict(descriptor)
    arch = d.pop("arch", None)
    if arch == "student":
        return student_layers(StudentConfig(**d))
    if arch == "teacher":
        return teacher_layers(TeacherConfig(**d))
    raise ConfigError(f"unknown architecture {arch!r}")


def count_params_flops(descriptor: Dict[str, Any]) -> Tuple[int, int]:
    rows = layer_table(descriptor)
    return sum(r.params for r in rows), sum(r.flops for r in rows)
