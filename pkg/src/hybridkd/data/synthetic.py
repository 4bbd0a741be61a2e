"""Procedural leaf-lesion images.

Every image is a pure function of ``(spec, index)``: the generator seeds a
private RNG from ``(spec.seed, tier, index)`` and draws a leaf on a soil
background, then the lesion pattern of its class. The ``hard`` tier varies
leaf pose and lighting, adds background clutter and dirt specks, and makes
class pairs share lesion colours and sizes so that only morphology
(rings, halos, pale centres, arrangement) separates them. On top of that,
each hard image blends in a weaker copy of a fixed partner class's pattern
with a random weight up to ``MAX_OVERLAP``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np

from ..errors import ConfigError
from .splits import DatasetSplits, make_splits

CLASS_NAMES = [
    "healthy",
    "bacterial_spot",
    "early_blight",
    "late_blight",
    "leaf_mold",
    "septoria",
    "yellow_curl",
    "mosaic",
]

_TIER_CODE = {"easy": 1, "hard": 2}
# hard-tier confusable pairs and the largest weight the partner pattern can take
_PARTNER = [7, 5, 3, 2, 6, 1, 4, 0]
MAX_OVERLAP = 0.4


@dataclass
class SyntheticSpec:
    n_classes: int = 8
    images_per_class: int = 300
    image_size: int = 64
    tier: str = "hard"
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.tier not in _TIER_CODE:
            raise ConfigError(f"tier must be 'easy' or 'hard', got {self.tier!r}")
        if self.images_per_class < 1 or self.image_size < 8:
            raise ConfigError("images_per_class must be >= 1 and image_size >= 8")

    @property
    def n_images(self) -> int:
        return self.n_classes * self.images_per_class

    def to_dict(self) -> Dict:
        return asdict(self)


def class_names(n_classes: int):
    return [CLASS_NAMES[k] if k < len(CLASS_NAMES) else f"{CLASS_NAMES[k % 8]}_{k // 8}" for k in range(n_classes)]


def label_of(spec: SyntheticSpec, index: int) -> int:
    return index // spec.images_per_class


# -- drawing primitives -------------------------------------------------------------------


class _Canvas:
    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        c = np.arange(size) + 0.5
        self.yy, self.xx = np.meshgrid(c, c, indexing="ij")
        self.img = np.zeros((size, size, 3))

    def blend(self, alpha: np.ndarray, color) -> None:
        a = np.clip(alpha, 0.0, 1.0)[..., None]
        self.img = self.img * (1.0 - a) + np.asarray(color, dtype=float) * a

    def disk(self, cy, cx, r, soft=0.7) -> np.ndarray:
        d = np.hypot(self.yy - cy, self.xx - cx)
        return np.clip((r - d) / soft + 0.5, 0.0, 1.0)

    def smooth_noise(self, cells: int) -> np.ndarray:
        """Bilinearly upsampled uniform noise with ``cells`` knots per side, in [0, 1]."""
        g = self.rng.random((cells + 1, cells + 1))
        t = np.linspace(0, cells, self.size)
        i = np.minimum(t.astype(int), cells - 1)
        f = t - i
        rows = g[i] * (1 - f)[:, None] + g[i + 1] * f[:, None]
        return rows[:, i] * (1 - f)[None, :] + rows[:, i + 1] * f[None, :]


def _leaf_frame(cv: _Canvas, hard: bool):
    s = cv.size
    rng = cv.rng
    if hard:
        cy, cx = s / 2 + rng.uniform(-0.07, 0.07, size=2) * s
        a, b = rng.uniform(0.36, 0.46) * s, rng.uniform(0.24, 0.32) * s
        theta = rng.uniform(0, np.pi)
    else:
        cy, cx = s / 2, s / 2
        a, b = 0.44 * s, 0.32 * s
        theta = rng.uniform(-0.15, 0.15)
    ct, st = np.cos(theta), np.sin(theta)
    u = ((cv.xx - cx) * ct + (cv.yy - cy) * st) / a
    v = (-(cv.xx - cx) * st + (cv.yy - cy) * ct) / b
    rho = np.hypot(u, v)
    mask = np.clip((1.0 - rho) * min(a, b) / 0.8 + 0.5, 0.0, 1.0)

    def sample_point(margin=0.15):
        while True:
            pu, pv = rng.uniform(-1, 1, size=2)
            if pu * pu + pv * pv <= (1 - margin) ** 2:
                x = cx + pu * a * ct - pv * b * st
                y = cy + pu * a * st + pv * b * ct
                return y, x

    return mask, rho, v, sample_point, min(a, b)


def _background(cv: _Canvas, hard: bool):
    rng = cv.rng
    soil = np.array([0.45, 0.35, 0.25]) + rng.uniform(-0.05, 0.05, size=3)
    tex = cv.smooth_noise(6)[..., None] - 0.5
    cv.img = soil + 0.12 * tex + 0.0
    if hard:
        for _ in range(rng.integers(3, 7)):
            y, x = rng.uniform(0, cv.size, size=2)
            color = rng.uniform(0.1, 0.8, size=3)
            cv.blend(cv.disk(y, x, rng.uniform(2, 7), soft=1.5), color)


def _leaf(cv: _Canvas, mask, rho, v, hard: bool):
    rng = cv.rng
    green = np.array([0.22, 0.52, 0.18])
    if hard:
        green = green + rng.uniform(-0.06, 0.06, size=3)
    tex = cv.smooth_noise(5)[..., None] - 0.5
    leaf = green + 0.08 * tex
    vein = np.exp(-((v * 12.0) ** 2)) * (rho < 0.95)
    leaf = leaf + 0.10 * vein[..., None]
    cv.img = cv.img * (1 - mask[..., None]) + leaf * mask[..., None]


# -- lesion patterns -------------------------------------------------------------------------


def _spots(cv, mask, pt, n, radius, color, soft=0.7):
    for _ in range(n):
        y, x = pt()
        r = cv.rng.uniform(*radius)
        cv.blend(cv.disk(y, x, r, soft) * mask, color)


def _draw_class(cv: _Canvas, profile: int, mask, rho, pt, hard: bool, shade) -> None:
    rng = cv.rng
    u = rng.uniform
    brown = np.array([0.36, 0.22, 0.08]) + shade
    if profile == 0:
        return
    if profile == 1:  # many tiny dark solid spots
        n = rng.integers(10, 26) if hard else rng.integers(18, 30)
        r = (0.9, 1.9) if hard else (1.0, 1.6)
        _spots(cv, mask, pt, n, r, (brown * 0.45) if hard else (0.08, 0.05, 0.02))
    elif profile == 2:  # large target spots with concentric rings and yellow halo
        n = rng.integers(2, 6) if hard else rng.integers(3, 6)
        for _ in range(n):
            y, x = pt()
            r = u(3.5, 7.0) if hard else u(4.5, 7.0)
            halo = cv.disk(y, x, r + 1.8, 1.2) * mask
            cv.blend(halo * (0.55 if hard else 0.8), (0.75, 0.7, 0.2))
            d = np.hypot(cv.yy - y, cv.xx - x)
            ring = 0.5 + 0.5 * np.cos(d * 2 * np.pi / 2.2)
            body = cv.disk(y, x, r, 0.8) * mask
            cv.blend(body, brown)
            cv.blend(body * ring * 0.8, brown * 0.45)
    elif profile == 3:  # one to three big soft irregular dark blotches
        n = rng.integers(1, 4) if hard else rng.integers(1, 3)
        color = brown * 0.8 if hard else np.array([0.25, 0.27, 0.1])
        for _ in range(n):
            y, x = pt(0.3)
            r = u(6.0, 11.0) if hard else u(8.0, 13.0)
            wobble = cv.smooth_noise(4) - 0.5
            d = np.hypot(cv.yy - y, cv.xx - x) + 6.0 * wobble
            cv.blend(np.clip((r - d) / 2.0 + 0.5, 0, 1) * mask, color)
    elif profile == 4:  # diffuse pale-yellow patches
        n = rng.integers(3, 8) if hard else rng.integers(4, 8)
        _spots(cv, mask, pt, n, (3.0, 6.5) if hard else (4.0, 7.0), (0.72, 0.68, 0.28), soft=3.0)
    elif profile == 5:  # small spots with pale centre and dark rim
        n = rng.integers(8, 22) if hard else rng.integers(10, 20)
        for _ in range(n):
            y, x = pt()
            r = u(1.6, 2.8) if hard else u(2.0, 3.0)
            cv.blend(cv.disk(y, x, r, 0.6) * mask, brown * 0.45)
            cv.blend(cv.disk(y, x, r * 0.55, 0.5) * mask, (0.78, 0.76, 0.68))
    elif profile == 6:  # chlorotic leaf margin
        w = u(0.14, 0.26) if hard else u(0.2, 0.3)
        band = np.clip((rho - (1 - w)) / 0.05, 0, 1) * mask
        cv.blend(band * (0.75 if hard else 0.95), (0.72, 0.7, 0.2))
    elif profile == 7:  # mosaic mottling
        m = cv.smooth_noise(int(rng.integers(5, 9)))
        patches = np.clip((m - 0.5) * 8.0, 0, 1) * mask
        cv.blend(patches * (0.55 if hard else 0.85), (0.55, 0.72, 0.3))


def render(spec: SyntheticSpec, index: int) -> Tuple[np.ndarray, int]:
    """Return (uint8 image (H, W, 3), label) for sample ``index``."""
    if not 0 <= index < spec.n_images:
        raise IndexError(f"index {index} out of range for {spec.n_images} images")
    label = label_of(spec, index)
    hard = spec.tier == "hard"
    rng = np.random.default_rng([spec.seed, _TIER_CODE[spec.tier], index])
    cv = _Canvas(spec.image_size, rng)
    _background(cv, hard)
    mask, rho, v, pt, _ = _leaf_frame(cv, hard)
    _leaf(cv, mask, rho, v, hard)
    shade = rng.uniform(-0.05, 0.05, size=3) if hard else 0.0
    if hard:
        # overlap: a weaker copy of a confusable class is mixed into every leaf
        base = cv.img.copy()
        _draw_class(cv, label % 8, mask, rho, pt, hard, shade)
        own = cv.img - base
        cv.img = base.copy()
        _draw_class(cv, _PARTNER[label % 8], mask, rho, pt, hard, shade)
        w = rng.uniform(0.0, MAX_OVERLAP)
        cv.img = base + (1.0 - w) * own + w * (cv.img - base)
    else:
        # easy tier: one lesion layout per class, shifted by a small per-image jitter
        dy, dx = rng.uniform(-1.5, 1.5, size=2)
        cv.rng = np.random.default_rng([spec.seed, 99, label])
        _, _, _, class_pt, _ = _leaf_frame(cv, hard)

        def pt(margin=0.15):
            y, x = class_pt(margin)
            return y + dy, x + dx

        _draw_class(cv, label % 8, mask, rho, pt, hard, shade)
        cv.rng = rng
    if label >= 8:
        cv.img = cv.img[..., [(label // 8 + k) % 3 for k in range(3)]]
    if hard:
        for _ in range(rng.integers(0, 4)):
            y, x = pt()
            cv.blend(cv.disk(y, x, rng.uniform(0.7, 1.4)) * mask, rng.uniform(0.25, 0.5, size=3))
        gy, gx = rng.normal(0, 0.004, size=2)
        light = 1.0 + rng.uniform(-0.15, 0.15) + gy * (cv.yy - cv.size / 2) + gx * (cv.xx - cv.size / 2)
        cv.img = cv.img * light[..., None] + rng.normal(0, 0.03, size=cv.img.shape)
    img = np.clip(np.round(cv.img * 255.0), 0, 255).astype(np.uint8)
    return img, label


def to_float(img_u8: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) float32 in [0, 1]."""
    return (img_u8.astype(np.float32) / 255.0).transpose(2, 0, 1)


def generate_arrays(spec: SyntheticSpec) -> Tuple[np.ndarray, np.ndarray]:
    imgs = np.empty((spec.n_images, 3, spec.image_size, spec.image_size), dtype=np.float32)
    labels = np.empty(spec.n_images, dtype=np.int64)
    for i in range(spec.n_images):
        img, labels[i] = render(spec, i)
        imgs[i] = to_float(img)
    return imgs, labels


def generate(spec: SyntheticSpec) -> DatasetSplits:
    imgs, labels = generate_arrays(spec)
    return make_splits(imgs, labels, spec.seed, class_names(spec.n_classes))
