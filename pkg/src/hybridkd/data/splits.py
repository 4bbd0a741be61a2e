"""Dataset container and stratified 70/20/10 splitting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from ..errors import DataError

SPLIT_RATIOS = (0.7, 0.2, 0.1)


def stratified_split(labels: np.ndarray, seed: int, ratios=SPLIT_RATIOS) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class seeded shuffle, then ``round(r * n)`` samples to train and val, the rest to test."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_tr = int(round(ratios[0] * idx.size))
        n_va = int(round(ratios[1] * idx.size))
        train.append(idx[:n_tr])
        val.append(idx[n_tr : n_tr + n_va])
        test.append(idx[n_tr + n_va :])
    return tuple(np.sort(np.concatenate(part)).astype(np.int64) for part in (train, val, test))


@dataclass
class DatasetSplits:
    """Images (N, 3, H, W) float32 in [0, 1], integer labels, and split indices."""

    images: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    class_names: List[str] = field(default_factory=list)
    skipped: int = 0

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise DataError(f"images {self.images.shape} and labels {self.labels.shape} disagree")
        if not self.class_names:
            self.class_names = [f"class_{k}" for k in range(int(self.labels.max()) + 1)]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_size(self) -> int:
        return self.images.shape[2]

    def split(self, name: str) -> np.ndarray:
        if name not in ("train", "val", "test"):
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)

    def arrays(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        idx = self.split(name)
        if idx.size == 0:
            raise DataError(f"split {name!r} is empty")
        return self.images[idx], self.labels[idx]

    def batches(
        self,
        name: str,
        batch_size: int,
        rng: Optional[np.random.Generator] = None,
        augment: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]] = None,
        augment_rng: Optional[np.random.Generator] = None,
    ) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Yield (indices, images, labels); shuffled when ``rng`` is given.

        ``augment`` is only honoured for the training split so evaluation
        pixels never change between epochs. It draws from ``augment_rng``
        (falling back to ``rng``).
        """
        idx = self.split(name)
        if idx.size == 0:
            raise DataError(f"split {name!r} is empty")
        if rng is not None:
            idx = idx[rng.permutation(idx.size)]
        for start in range(0, idx.size, batch_size):
            sel = idx[start : start + batch_size]
            x = self.images[sel]
            if augment is not None and name == "train":
                arng = augment_rng if augment_rng is not None else rng
                x = np.stack([augment(img, arng) for img in x])
            yield sel, x, self.labels[sel]


def make_splits(images: np.ndarray, labels: np.ndarray, seed: int, class_names=None, skipped: int = 0) -> DatasetSplits:
    for c in range(int(labels.max()) + 1 if labels.size else 0):
        if not np.any(labels == c):
            raise DataError(f"class {c} has no images")
    tr, va, te = stratified_split(labels, seed)
    return DatasetSplits(images, labels, tr, va, te, list(class_names or []), skipped)
