"""Fixed trainable subspaces and their coordinate projector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Network


@dataclass(frozen=True)
class TrainableSubspace:
    mask: np.ndarray
    label: str

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 1:
            raise ValueError("mask must be a vector")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def dim(self) -> int:
        return self.mask.size

    @property
    def dim_S(self) -> int:
        return int(self.mask.sum())

    def _check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != self.mask.shape:
            raise ValueError(f"vector length {v.shape} does not match subspace dimension {self.dim}")
        return v


def regime_label(k_blocks: int, num_blocks: int) -> str:
    return "full" if k_blocks == num_blocks else f"last_{k_blocks}"


def make_depth_regime(net: Network, k_blocks: int) -> TrainableSubspace:
    """Unfreeze the last ``k_blocks`` blocks; the classifier head is always trainable."""
    num_blocks = net.spec.num_blocks
    if not 1 <= k_blocks <= num_blocks:
        raise ValueError(f"k_blocks must be in [1, {num_blocks}], got {k_blocks}")
    mask = np.zeros(net.spec.num_params, dtype=bool)
    for start, end in net.block_ranges[num_blocks - k_blocks:]:
        mask[start:end] = True
    return TrainableSubspace(mask, regime_label(k_blocks, num_blocks))


def project(sub: TrainableSubspace, v: np.ndarray) -> np.ndarray:
    v = sub._check(v)
    return np.where(sub.mask, v, 0.0)


def subspace_inner(sub: TrainableSubspace, a: np.ndarray, b: np.ndarray) -> float:
    a = sub._check(a)
    b = sub._check(b)
    return float(np.dot(a[sub.mask], b[sub.mask]))
