"""Supervised, soft-label and attention-alignment losses and their weighted sum."""

from __future__ import annotations

import numpy as np

from ..core import Tensor, cross_entropy, kl_div, softmax
from ..errors import DimensionError, NumericError


def loss_ce(z_s: Tensor, labels) -> Tensor:
    return cross_entropy(z_s, labels)


def loss_logit(z_t: Tensor, z_s: Tensor, tau: float) -> Tensor:
    """tau^2 * mean KL(softmax(z_t / tau) || softmax(z_s / tau)); no gradient reaches z_t."""
    if z_t.shape != z_s.shape:
        raise DimensionError(f"teacher logits {z_t.shape} and student logits {z_s.shape} differ")
    p_t = softmax(z_t.detach(), axis=1, temperature=tau)
    p_s = softmax(z_s, axis=1, temperature=tau)
    return kl_div(p_t, p_s, axis=1) * (tau * tau)


def loss_attn(p_t: Tensor, p_s: Tensor, detach_teacher: bool = False) -> Tensor:
    """Mean KL(p_t || p_s) over the batch.

    The teacher distribution keeps its graph by default so a trainable
    teacher-side adapter receives gradient; teacher network weights are
    outside the graph either way.
    """
    if p_t.shape != p_s.shape:
        raise DimensionError(f"attention distributions {p_t.shape} and {p_s.shape} differ")
    return kl_div(p_t.detach() if detach_teacher else p_t, p_s, axis=1)


def loss_total(l_ce: Tensor, l_logit: Tensor, l_attn: Tensor, alpha: float, beta: float) -> Tensor:
    """l_ce + alpha * l_logit + beta * l_attn; zero-weight terms are left out of the graph."""
    for name, v in (("ce", l_ce), ("logit", l_logit), ("attn", l_attn)):
        if v is not None and not np.isfinite(v.data).all():
            raise NumericError(f"{name} loss is not finite")
    total = l_ce
    if alpha != 0:
        total = total + l_logit * alpha
    if beta != 0:
        total = total + l_attn * beta
    return total
