"""Differentiable kernels used by the models and the distillation losses."""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, DataError, DimensionError, NumericError
from .tensor import Tensor

LOG_FLOOR = 1e-9
MIN_TEMPERATURE = 1e-6


def _check_finite(x: np.ndarray, op: str) -> None:
    if not np.isfinite(x).all():
        raise NumericError(f"{op}: input contains NaN or Inf")


# -- softmax family --------------------------------------------------------------


def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    """Stable softmax of ``x / temperature`` along ``axis``."""
    if temperature < MIN_TEMPERATURE:
        raise ConfigError(f"temperature must be >= {MIN_TEMPERATURE}, got {temperature}")
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for shape {x.shape}")
    _check_finite(x.data, "softmax")
    inv_t = 1.0 / temperature
    y = _softmax_np(x.data * x.dtype.type(inv_t), axis)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot) * inv_t,)

    return Tensor._wrap(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite(x.data, "log_softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._wrap(y, (x,), backward)


# -- losses ------------------------------------------------------------------------


def kl_div(p: Tensor, q: Tensor, axis: int = -1) -> Tensor:
    """Batch-mean ``sum p * log(p / q) - p + q``; ``q`` is floored at 1e-9 before the log.

    For normalised rows this equals ``sum p * (log p - log q)``. Every term is
    non-negative on its own, so rounding cannot push the total below zero the
    way a cancelling sum can. The batch is every axis other than ``axis``; the
    result is a 0-d tensor.
    """
    if p.shape != q.shape:
        raise DimensionError(f"kl_div: shapes {p.shape} and {q.shape} differ")
    pd, qd = p.data, q.data
    dt = pd.dtype
    p64, q64 = pd.astype(np.float64), qd.astype(np.float64)
    n_rows = pd.size // pd.shape[axis]
    qf = np.maximum(q64, LOG_FLOOR)
    pos = p64 > 0
    logp = np.log(np.where(pos, p64, 1.0))
    logq = np.log(qf)
    terms = np.where(pos, p64 * (logp - logq), 0.0) - p64 + qf
    val = np.maximum(terms, 0.0).sum() / n_rows
    scale = 1.0 / n_rows

    def backward(g):
        gp = np.where(pos, logp - logq, 0.0) * (g * scale)
        gq = np.where(q64 >= LOG_FLOOR, 1.0 - p64 / qf, 0.0) * (g * scale)
        return gp.astype(dt), gq.astype(dt)

    return Tensor._wrap(np.asarray(val, dtype=dt), (p, q), backward)


def _check_labels(labels: np.ndarray, n: int, n_classes: int, op: str) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"{op}: expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"{op}: labels must lie in [0, {n_classes})")
    return labels.astype(np.int64)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood using a fused log-softmax."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be (B, C), got {logits.shape}")
    b, c = logits.shape
    labels = _check_labels(labels, b, c, "cross_entropy")
    _check_finite(logits.data, "cross_entropy")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(b)
    val = -logp[rows, labels].mean()
    dt = logits.dtype

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return ((d * (g / b)).astype(dt),)

    return Tensor._wrap(np.asarray(val, dtype=dt), (logits,), backward)


def focal_loss(logits: Tensor, labels, gamma: float = 2.0) -> Tensor:
    """Mean ``-(1 - p_t)^gamma * log p_t``; gamma == 0 is cross-entropy."""
    if gamma < 0:
        raise ConfigError(f"focal gamma must be >= 0, got {gamma}")
    if logits.ndim != 2:
        raise DimensionError(f"focal_loss: logits must be (B, C), got {logits.shape}")
    b, c = logits.shape
    labels = _check_labels(labels, b, c, "focal_loss")
    _check_finite(logits.data, "focal_loss")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(b)
    lpt = logp[rows, labels]
    pt = np.exp(lpt)
    one_m = np.maximum(1.0 - pt, 0.0)
    if gamma == 0:
        val = -lpt.mean()
        d_lpt = -np.ones_like(lpt)
    else:
        w = one_m**gamma
        val = -(w * lpt).mean()
        # d/d(log p_t) of -(1 - p_t)^g log p_t; the first term vanishes at p_t == 1
        safe = np.where(one_m > 0, one_m, 1.0)
        d_lpt = np.where(one_m > 0, gamma * safe ** (gamma - 1) * pt * lpt, 0.0) - w
    dt = logits.dtype

    def backward(g):
        # d log p_t / d z_j = onehot_j - p_j
        d = -np.exp(logp)
        d[rows, labels] += 1.0
        return ((d * d_lpt[:, None] * (g / b)).astype(dt),)

    return Tensor._wrap(np.asarray(val, dtype=dt), (logits,), backward)


# -- convolution --------------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Floor-mode output length; trailing rows a stride cannot reach are dropped."""
    span = size + 2 * padding - kernel
    if span < 0:
        raise DimensionError(f"conv2d: kernel {kernel} exceeds padded input size {size + 2 * padding}")
    return span // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation over (B, C, H, W) with weight (O, C/groups, Kh, Kw)."""
    if stride <= 0 or padding < 0 or groups <= 0:
        raise ConfigError(f"conv2d: stride must be positive, padding >= 0, groups > 0 (got {stride}, {padding}, {groups})")
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    b, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups or o % groups:
        raise DimensionError(f"conv2d: channels in={c} out={o} must be divisible by groups={groups}")
    if cg != c // groups:
        raise DimensionError(f"conv2d: weight expects {cg * groups} input channels, input has {c}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv2d: bias {bias.shape} does not match {o} output channels")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise DimensionError("conv2d: empty output")

    xd, wd = x.data, weight.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    s = stride
    hs, ws = s * (ho - 1) + 1, s * (wo - 1) + 1

    if groups == c and o == c and cg == 1:
        y, back = _depthwise(xp, wd, kh, kw, s, hs, ws)
    elif groups == 1:
        y, back = _dense(xp, wd, kh, kw, s, ho, wo, hs, ws)
    else:
        y, back = _grouped(xp, wd, groups, kh, kw, s, ho, wo, hs, ws)
    if bias is not None:
        y += bias.data[None, :, None, None]

    def backward(g):
        gxp, gw = back(g, x.requires_grad)
        if gxp is None:
            gx = None
        else:
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._wrap(y, inputs, backward)


def _depthwise(xp, wd, kh, kw, s, hs, ws):
    b, c = xp.shape[:2]
    y = None
    for i in range(kh):
        for j in range(kw):
            term = xp[:, :, i : i + hs : s, j : j + ws : s] * wd[:, 0, i, j][None, :, None, None]
            y = term if y is None else y + term

    def back(g, need_x=True):
        gxp = np.zeros_like(xp) if need_x else None
        gw = np.empty_like(wd)
        for i in range(kh):
            for j in range(kw):
                gw[:, 0, i, j] = np.einsum("bchw,bchw->c", g, xp[:, :, i : i + hs : s, j : j + ws : s])
                if need_x:
                    gxp[:, :, i : i + hs : s, j : j + ws : s] += g * wd[:, 0, i, j][None, :, None, None]
        return gxp, gw

    return y, back


def _dense(xp, wd, kh, kw, s, ho, wo, hs, ws):
    b, c = xp.shape[:2]
    o = wd.shape[0]
    if kh == 1 and kw == 1:
        xs = xp[:, :, :hs:s, :ws:s].transpose(0, 2, 3, 1).reshape(-1, c)
        w2 = wd.reshape(o, c)
        y = (xs @ w2.T).reshape(b, ho, wo, o).transpose(0, 3, 1, 2)

        def back(g, need_x=True):
            g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
            gw = (g2.T @ xs).reshape(wd.shape)
            if not need_x:
                return None, gw
            gxs = (g2 @ w2).reshape(b, ho, wo, c).transpose(0, 3, 1, 2)
            if s == 1 and xp.shape[2] == ho and xp.shape[3] == wo:
                return np.ascontiguousarray(gxs), gw
            gxp = np.zeros_like(xp)
            gxp[:, :, :hs:s, :ws:s] = gxs
            return gxp, gw

        return np.ascontiguousarray(y), back

    # windows: (B, C, Ho, Wo, Kh, Kw) -> rows (B*Ho*Wo, C*Kh*Kw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    wmat = wd.reshape(o, -1)
    y = (cols @ wmat.T).reshape(b, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g, need_x=True):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(wd.shape)
        if not need_x:
            return None, gw
        gcols = (g2 @ wmat).reshape(b, ho, wo, c, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + hs : s, j : j + ws : s] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return gxp, gw

    return np.ascontiguousarray(y), back


def _grouped(xp, wd, groups, kh, kw, s, ho, wo, hs, ws):
    c = xp.shape[1]
    o = wd.shape[0]
    ci, co = c // groups, o // groups
    parts = [
        _dense(np.ascontiguousarray(xp[:, k * ci : (k + 1) * ci]), wd[k * co : (k + 1) * co], kh, kw, s, ho, wo, hs, ws)
        for k in range(groups)
    ]
    y = np.concatenate([p[0] for p in parts], axis=1)

    def back(g, need_x=True):
        gxs, gws = zip(*(p[1](np.ascontiguousarray(g[:, k * co : (k + 1) * co]), need_x) for k, p in enumerate(parts)))
        return (np.concatenate(gxs, axis=1) if need_x else None), np.concatenate(gws, axis=0)

    return y, back


# -- resampling ----------------------------------------------------------------------


def bilinear_matrix(src: int, dst: int, dtype=np.float64) -> np.ndarray:
    """(dst, src) interpolation weights with half-pixel centres and edge clamping."""
    scale = src / dst
    coord = (np.arange(dst, dtype=np.float64) + 0.5) * scale - 0.5
    coord = np.clip(coord, 0.0, src - 1)
    lo = np.floor(coord).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = coord - lo
    m = np.zeros((dst, src), dtype=np.float64)
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize the two trailing axes of a (B, C, H, W) tensor."""
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"bilinear_resize: target size must be >= 1, got {out_h}x{out_w}")
    if x.ndim != 4:
        raise DimensionError(f"bilinear_resize: expected (B, C, H, W), got {x.shape}")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return Tensor._wrap(x.data.copy(), (x,), lambda g: (g,))
    rh = bilinear_matrix(h, out_h, x.dtype)
    rw = bilinear_matrix(w, out_w, x.dtype)
    y = rh @ x.data @ rw.T

    def backward(g):
        return (rh.T @ g @ rw,)

    return Tensor._wrap(np.ascontiguousarray(y), (x,), backward)


# -- normalisation -------------------------------------------------------------------


def _normalize(x: np.ndarray, axes: tuple, eps: float):
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv


def _normalize_backward(gxhat, xhat, inv, axes):
    m1 = gxhat.mean(axis=axes, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=axes, keepdims=True)
    return inv * (gxhat - m1 - xhat * m2)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis with a per-feature affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: affine params must have shape ({d},)")
    xhat, inv = _normalize(x.data, (-1,), eps)
    gd = gamma.data
    y = xhat * gd + beta.data
    red = tuple(range(x.ndim - 1))

    def backward(g):
        gx = _normalize_backward(g * gd, xhat, inv, (-1,))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return Tensor._wrap(y, (x, gamma, beta), backward)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Single-group normalisation of (B, C, H, W) over (C, H, W), per-channel affine."""
    if x.ndim != 4:
        raise DimensionError(f"group_norm: expected (B, C, H, W), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"group_norm: affine params must have shape ({c},)")
    axes = (1, 2, 3)
    xhat, inv = _normalize(x.data, axes, eps)
    gd = gamma.data[None, :, None, None]
    y = xhat * gd + beta.data[None, :, None, None]

    def backward(g):
        gx = _normalize_backward(g * gd, xhat, inv, axes)
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return Tensor._wrap(y, (x, gamma, beta), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool: expected (B, C, H, W), got {x.shape}")
    hw = x.shape[2] * x.shape[3]
    shape = x.shape

    def backward(g):
        return (np.broadcast_to((g / hw)[:, :, None, None], shape).copy(),)

    return Tensor._wrap(x.data.mean(axis=(2, 3)), (x,), backward)
