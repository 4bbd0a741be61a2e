"""PNG image folders: ``root/<class_name>/*.png``."""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import DataError
from .splits import DatasetSplits, make_splits
from .synthetic import SyntheticSpec, class_names, render

log = logging.getLogger(__name__)


def _read_png(path: Path, image_size: int) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (image_size, image_size):
            im = im.resize((image_size, image_size), Image.BILINEAR)
        return np.asarray(im, dtype=np.uint8)


def load_directory(root, image_size: int, seed: int = 0) -> DatasetSplits:
    """Decode every PNG under ``root``, one sub-directory per class (sorted by name).

    Files that fail to decode are skipped with a warning; the count is kept
    in ``DatasetSplits.skipped``.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    classes = sorted(d.name for d in root.iterdir() if d.is_dir())
    if len(classes) < 2:
        raise DataError(f"{root} must contain at least two class directories")
    images, labels, skipped = [], [], 0
    for label, name in enumerate(classes):
        count = 0
        for path in sorted((root / name).glob("*.png")):
            try:
                img = _read_png(path, image_size)
            except (OSError, UnidentifiedImageError, ValueError) as e:
                log.warning("skipping unreadable image %s: %s", path, e)
                skipped += 1
                continue
            images.append(img.astype(np.float32).transpose(2, 0, 1) / 255.0)
            labels.append(label)
            count += 1
        if count == 0:
            raise DataError(f"class {name!r} has no readable images")
    return make_splits(np.stack(images), np.asarray(labels, dtype=np.int64), seed, classes, skipped)


def export_synthetic(spec: SyntheticSpec, root) -> int:
    """Write the synthetic dataset as PNGs in the folder layout above; returns the image count."""
    root = Path(root)
    names = class_names(spec.n_classes)
    for name in names:
        os.makedirs(root / name, exist_ok=True)
    for i in range(spec.n_images):
        img, label = render(spec, i)
        Image.fromarray(img).save(root / names[label] / f"{i:05d}.png", optimize=False)
    return spec.n_images
