"""Post-training int8 quantization with fake-quant inference.

Every parameter tensor (weights, biases and norm affines) is quantized per
tensor and symmetrically, zero point 0; ``min_ndim=2`` restricts this to
weight matrices and kernels. Activations after each weighted layer get
an asymmetric range from min/max over a calibration set. Inference runs in
float on dequantized weights and snaps every tapped activation to its int8
grid.
"""

from __future__ import annotations

from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..core import Tensor, no_grad
from ..errors import ConfigError
from ..models import build_model, describe

SCALE_FLOOR = 1e-8
MIN_CALIBRATION = 32
QMIN, QMAX = -128, 127


def quantize_symmetric(w: np.ndarray, floor: float = SCALE_FLOOR) -> Tuple[np.ndarray, float]:
    scale = max(float(np.max(np.abs(w))) / 127.0 if w.size else 0.0, floor)
    q = np.clip(np.round(w / scale), -127, 127).astype(np.int8)
    return q, scale


def dequantize(q: np.ndarray, scale: float, zero_point: int = 0) -> np.ndarray:
    return ((q.astype(np.float32) - np.float32(zero_point)) * np.float32(scale)).astype(np.float32)


def activation_qparams(lo: float, hi: float, floor: float = SCALE_FLOOR) -> Tuple[float, int]:
    """Asymmetric (scale, zero_point) whose grid covers [min(lo, 0), max(hi, 0)]."""
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    scale = max((hi - lo) / (QMAX - QMIN), floor)
    zp = int(np.clip(np.round(QMIN - lo / scale), QMIN, QMAX))
    return scale, zp


def fake_quant(x: np.ndarray, scale: float, zero_point: int) -> np.ndarray:
    q = np.clip(np.round(x / scale) + zero_point, QMIN, QMAX)
    return ((q - zero_point) * scale).astype(x.dtype)


class QuantModel:
    """An int8 student: quantized weights, float leftovers and activation ranges."""

    def __init__(self, descriptor: Dict, qweights: Dict[str, Tuple[np.ndarray, float]],
                 floats: Dict[str, np.ndarray], act_ranges: Dict[str, Tuple[float, float]],
                 quantize_activations: bool = True):
        self.descriptor = dict(descriptor)
        self.qweights = qweights
        self.floats = floats
        self.act_ranges = act_ranges
        self.quantize_activations = quantize_activations
        self._model = build_model(self.descriptor)
        state = {}
        for name, p in self._model.named_parameters():
            if name in qweights:
                q, s = qweights[name]
                state[name] = dequantize(q, s)
            else:
                state[name] = floats[name]
        self._model.load_state_dict(state)
        self._model.freeze()
        self._qparams = {k: activation_qparams(*v) for k, v in act_ranges.items()}

    @property
    def config(self):
        return self._model.config

    def tensor_names(self) -> List[str]:
        return [name for name, _ in self._model.named_parameters()]

    def _hook(self, name: str, x: Tensor) -> Tensor:
        qp = self._qparams.get(name)
        if qp is None or not self.quantize_activations:
            return x
        return Tensor(fake_quant(x.data, *qp))

    def __call__(self, x: Tensor):
        with no_grad():
            return self._model(x, hook=self._hook)

    def float_model(self):
        """The dequantized float model (no activation rounding)."""
        return self._model


def calibrate(model, batches: Iterable[np.ndarray]) -> Tuple[Dict[str, Tuple[float, float]], int]:
    """Min/max of every tapped activation over ``batches``; returns (ranges, images seen)."""
    ranges: Dict[str, List[float]] = {}

    def hook(name, t):
        lo, hi = float(t.data.min()), float(t.data.max())
        if name in ranges:
            r = ranges[name]
            r[0], r[1] = min(r[0], lo), max(r[1], hi)
        else:
            ranges[name] = [lo, hi]
        return t

    seen = 0
    with no_grad():
        for x in batches:
            x = np.asarray(x, dtype=np.float32)
            if x.shape[0] == 0:
                continue
            model(Tensor(x), hook=hook)
            seen += x.shape[0]
    return {k: (v[0], v[1]) for k, v in ranges.items()}, seen


def quantize_model(student, calib: Iterable[np.ndarray], min_images: int = MIN_CALIBRATION,
                   quantize_activations: bool = True, min_ndim: int = 1) -> QuantModel:
    """Quantize ``student`` using activation ranges from the image batches in ``calib``."""
    ranges, seen = calibrate(student, calib)
    if seen < min_images:
        raise ConfigError(f"calibration needs at least {min_images} images, got {seen}")
    qweights, floats = {}, {}
    for name, p in student.named_parameters():
        if p.data.ndim >= min_ndim:
            qweights[name] = quantize_symmetric(p.data)
        else:
            floats[name] = np.asarray(p.data, dtype=np.float32).copy()
    return QuantModel(describe(student), qweights, floats, ranges, quantize_activations)


def calibration_batches(images: np.ndarray, n_images: int = 256, batch_size: int = 64,
                        rng: Optional[np.random.Generator] = None):
    """Up to ``n_images`` images (a seeded subset when ``rng`` is given), in batches."""
    idx = np.arange(images.shape[0])
    if rng is not None:
        idx = rng.permutation(idx)
    idx = idx[:n_images]
    return [images[idx[i : i + batch_size]] for i in range(0, idx.size, batch_size)]
