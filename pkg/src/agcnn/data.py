"""In-memory image splits consumed by training and evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from agcnn.errors import InputError


@dataclass
class Split:
    images: np.ndarray                   # N x 3 x S x S in [0, 1]
    labels: np.ndarray                   # N, values in {0, 1}
    attention: Optional[np.ndarray] = None  # N x S/2 x S/2 ground truth, if known

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise InputError(f"images must be N x 3 x S x S, got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise InputError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.attention is not None:
            self.attention = np.asarray(self.attention, dtype=np.float64)
            if len(self.attention) != len(self.images):
                raise InputError("attention maps and images differ in count")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Split":
        att = None if self.attention is None else self.attention[idx]
        return Split(self.images[idx], self.labels[idx], att)


@dataclass
class Dataset:
    train: Split
    val: Split
    test: Optional[Split] = None
