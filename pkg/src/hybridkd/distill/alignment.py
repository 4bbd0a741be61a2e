"""Cross-architecture alignment of teacher attention and student features.

Teacher attention (B, N_h, N_p, N_p) becomes a one-channel saliency grid by
averaging over heads and then over queries, so each patch scores the
attention it receives. Both branches are projected to ``C_common`` channels
by 1x1 adapters, the teacher branch is bilinearly resized to the student's
grid, and each branch is flattened and softmax-normalised over all
``C_common * H_S * W_S`` positions.
"""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np

from ..core import Tensor, bilinear_resize, softmax
from ..errors import ConfigError, DimensionError
from ..layers import Conv2d, Module


class ChannelAdapters(Module):
    def __init__(self, teacher_channels: int, student_channels: int, common: int, rng: np.random.Generator,
                 train_teacher: bool = True):
        self.g_t = Conv2d(teacher_channels, common, 1, rng)
        self.g_s = Conv2d(student_channels, common, 1, rng)
        if not train_teacher:
            for p in self.g_t.parameters():
                p.requires_grad = False
        self._common = common

    @property
    def common(self) -> int:
        return self._common


def teacher_attention_to_spatial(attn: Tensor) -> Tensor:
    """(B, N_h, N_p, N_p) attention -> (B, 1, sqrt(N_p), sqrt(N_p)) received-attention map."""
    if attn.ndim != 4 or attn.shape[2] != attn.shape[3]:
        raise DimensionError(f"expected attention (B, N_h, N_p, N_p), got {attn.shape}")
    b, _, n_p, _ = attn.shape
    side = math.isqrt(n_p)
    if side * side != n_p:
        raise ConfigError(f"number of patches {n_p} is not a perfect square")
    received = attn.mean(axis=1).mean(axis=1)
    return received.reshape(b, 1, side, side)


def align(teacher_map: Tensor, student_feat: Tensor, adapters: ChannelAdapters) -> Tuple[Tensor, Tensor]:
    """Return (P_T, P_S), each (B, K) with K = C_common * H_S * W_S."""
    if teacher_map.ndim != 4 or student_feat.ndim != 4 or teacher_map.shape[0] != student_feat.shape[0]:
        raise DimensionError(f"cannot align teacher {teacher_map.shape} with student {student_feat.shape}")
    if teacher_map.shape[1] != adapters.g_t.weight.shape[1]:
        raise DimensionError(
            f"teacher adapter expects {adapters.g_t.weight.shape[1]} channels, got {teacher_map.shape[1]}"
        )
    if student_feat.shape[1] != adapters.g_s.weight.shape[1]:
        raise DimensionError(
            f"student adapter expects {adapters.g_s.weight.shape[1]} channels, got {student_feat.shape[1]}"
        )
    b, _, h_s, w_s = student_feat.shape
    t = bilinear_resize(adapters.g_t(teacher_map), h_s, w_s)
    s = adapters.g_s(student_feat)
    k = adapters.common * h_s * w_s
    return softmax(t.reshape(b, k), axis=1), softmax(s.reshape(b, k), axis=1)
