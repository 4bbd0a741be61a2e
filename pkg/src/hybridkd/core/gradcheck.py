"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError, NumericError
from .tensor import Tensor, get_tape, no_grad


def numerical_grad(
    f: Callable[[Tensor], Tensor],
    point: Tensor,
    epsilon: float = 1e-6,
    indices: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Central differences of scalar ``f`` at ``point`` (only at flat ``indices`` if given)."""
    base = point.data.copy()
    flat = point.data.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(indices)
    out = np.zeros(flat.size, dtype=np.float64)
    with no_grad():
        for k in idx:
            orig = flat[k]
            flat[k] = orig + epsilon
            fp = float(f(point).item())
            flat[k] = orig - epsilon
            fm = float(f(point).item())
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"grad_check: f is not finite at perturbed element {k}")
            out[k] = (fp - fm) / (2.0 * epsilon)
    point.data[...] = base
    return out.reshape(point.shape)


def grad_check(
    f: Callable[[Tensor], Tensor],
    point: Tensor,
    epsilon: float = 1e-6,
    *,
    max_elements: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between autodiff and central-difference gradients.

    Error per element is ``|a - n| / max(1, |a|, |n|)``. ``point`` must be a
    float64 tensor; ``max_elements`` restricts the comparison to a random
    subset of entries for large parameter tensors.
    """
    if point.dtype != np.float64:
        raise ConfigError("grad_check needs a float64 point; build the graph under default_dtype(np.float64)")
    if not 1e-7 <= epsilon <= 1e-4:
        raise ConfigError(f"grad_check epsilon must lie in [1e-7, 1e-4], got {epsilon}")
    was = point.requires_grad
    point.requires_grad = True
    point.grad = None
    get_tape().clear()
    y = f(point)
    if y.size != 1:
        raise ConfigError(f"grad_check: f must return a scalar, got shape {y.shape}")
    y.backward()
    analytic = point.grad if point.grad is not None else np.zeros_like(point.data)
    point.grad = None
    point.requires_grad = was

    indices = None
    if max_elements is not None and max_elements < point.size:
        rng = rng or np.random.default_rng(0)
        indices = rng.choice(point.size, size=max_elements, replace=False)
    numeric = numerical_grad(f, point, epsilon, indices)
    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    if indices is not None:
        a, n = a[indices], n[indices]
    if not np.isfinite(a).all():
        raise NumericError("grad_check: autodiff gradient is not finite")
    err = np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(err.max()) if err.size else 0.0
