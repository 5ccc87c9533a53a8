"""Datasets, disjoint task splits and seeded task orders."""

from __future__ import annotations

import gzip
import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn import Batch
from .rng import XorShift64Star, hash64

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


class EmptyDatasetError(IdxError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("one label per sample required")

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class TaskSplit:
    train: tuple[np.ndarray, ...]
    test: tuple[np.ndarray, ...]
    classes_per_task: int

    def classes_of(self, task_id: int) -> range:
        c = self.classes_per_task
        return range(task_id * c, (task_id + 1) * c)


@dataclass(frozen=True)
class TaskData:
    train: Batch
    test: Batch


@dataclass(frozen=True)
class TaskOrder:
    perm: tuple[int, ...]
    order_id: int
    is_canonical: bool = False

    def __post_init__(self):
        if sorted(self.perm) != list(range(len(self.perm))):
            raise ValueError(f"{self.perm} is not a permutation")


# ---------------------------------------------------------------- IDX format


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, expected_magic: int, what: str) -> tuple[tuple[int, ...], np.ndarray]:
    if len(raw) < 4:
        raise TruncatedFileError(f"{what} file shorter than its magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{what} file has magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{what} header is truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    if dims[0] == 0:
        raise EmptyDatasetError(f"{what} file declares zero items")
    size = math.prod(dims)
    if len(raw) < header + size:
        raise TruncatedFileError(f"{what} file holds {len(raw) - header} of {size} data bytes")
    return dims, np.frombuffer(raw, dtype=np.uint8, count=size, offset=header)


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled by 1/255 and flattened."""
    img_dims, pixels = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, "image")
    lab_dims, labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, "label")
    if img_dims[0] != lab_dims[0]:
        raise CountMismatchError(f"{img_dims[0]} images but {lab_dims[0]} labels")
    inputs = pixels.reshape(img_dims[0], -1).astype(np.float64) / 255.0
    return Dataset(inputs, labels.astype(np.int64))


def write_idx(ds: Dataset, images_path: str | Path, labels_path: str | Path, image_shape: tuple[int, int] | None = None) -> None:
    """Write ``ds`` as IDX; inputs are quantized to bytes with round(255 * x)."""
    n, dim = ds.inputs.shape
    rows, cols = image_shape or (1, dim)
    if rows * cols != dim:
        raise ValueError("image_shape does not match input_dim")
    if ds.labels.max() > 255 or ds.labels.min() < 0:
        raise ValueError("labels must fit in one byte")
    pixels = np.clip(np.rint(ds.inputs * 255.0), 0, 255).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, n) + ds.labels.astype(np.uint8).tobytes())


# --------------------------------------------------------------- synthetic


def synth_gaussian_tasks(
    T: int, C: int, dim: int, n_per_class: int, separation: float, seed: int
) -> Dataset:
    """Unit-variance Gaussian clouds for T*C classes, min-max scaled to [0, 1].

    Class means are ``separation * z / sqrt(dim)`` with ``z`` standard normal,
    so the expected distance between two means is about ``separation * sqrt(2)``.
    """
    if T < 1 or C < 1 or dim < 1 or n_per_class < 1:
        raise ValueError("T, C, dim and n_per_class must be positive")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    rng = XorShift64Star(seed)
    k = T * C
    means = np.array(rng.normal_array(k * dim)).reshape(k, dim) * (separation / math.sqrt(dim))
    noise = np.array(rng.normal_array(k * n_per_class * dim)).reshape(k, n_per_class, dim)
    x = (means[:, None, :] + noise).reshape(k * n_per_class, dim)
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    labels = np.repeat(np.arange(k), n_per_class)
    return Dataset(x, labels)


# ------------------------------------------------------------------ splits


def _task_class_indices(labels: np.ndarray, T: int, C: int) -> list[list[np.ndarray]]:
    present = set(np.unique(labels).tolist())
    missing = [c for c in range(T * C) if c not in present]
    if missing:
        raise ValueError(f"need {T * C} classes, missing {missing[:5]}")
    return [[np.flatnonzero(labels == c) for c in range(t * C, (t + 1) * C)] for t in range(T)]


def split_tasks(ds: Dataset, T: int, C: int, test_fraction: float, seed: int) -> TaskSplit:
    """Task t owns classes [tC, (t+1)C); each class is split train/test by seed."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1); empty test sets are not allowed")
    train, test = [], []
    for t, per_class in enumerate(_task_class_indices(ds.labels, T, C)):
        tr, te = [], []
        for c, idx in enumerate(per_class):
            perm = np.array(XorShift64Star(hash64(seed, "split", t * C + c)).permutation(idx.size))
            n_test = min(max(1, int(round(test_fraction * idx.size))), idx.size - 1)
            if n_test < 1:
                raise ValueError(f"class {t * C + c} has too few samples to split")
            te.append(idx[perm[:n_test]])
            tr.append(idx[perm[n_test:]])
        train.append(np.sort(np.concatenate(tr)))
        test.append(np.sort(np.concatenate(te)))
    return TaskSplit(tuple(train), tuple(test), C)


def _task_batch(ds: Dataset, idx: np.ndarray, task_id: int, C: int) -> Batch:
    return Batch(ds.inputs[idx], ds.labels[idx] - task_id * C, task_id)


def task_data_from_split(ds: Dataset, split: TaskSplit) -> dict[int, TaskData]:
    C = split.classes_per_task
    return {
        t: TaskData(_task_batch(ds, tr, t, C), _task_batch(ds, te, t, C))
        for t, (tr, te) in enumerate(zip(split.train, split.test))
    }


def task_data_native(train_ds: Dataset, test_ds: Dataset, T: int, C: int) -> dict[int, TaskData]:
    """Tasks from a dataset that ships its own test split."""
    tr_idx = _task_class_indices(train_ds.labels, T, C)
    te_idx = _task_class_indices(test_ds.labels, T, C)
    return {
        t: TaskData(
            _task_batch(train_ds, np.sort(np.concatenate(tr_idx[t])), t, C),
            _task_batch(test_ds, np.sort(np.concatenate(te_idx[t])), t, C),
        )
        for t in range(T)
    }


def limit_per_class(ds: Dataset, max_per_class: int) -> Dataset:
    """Keep the first ``max_per_class`` samples of every class."""
    keep = np.concatenate([np.flatnonzero(ds.labels == c)[:max_per_class] for c in np.unique(ds.labels)])
    keep.sort()
    return Dataset(ds.inputs[keep], ds.labels[keep])


# ------------------------------------------------------------------ orders


def sample_orders(T: int, n_random: int, seed: int) -> list[TaskOrder]:
    """Canonical order first, then ``n_random`` seeded Fisher-Yates shuffles."""
    if n_random < 0:
        raise ValueError("n_random must be non-negative")
    rng = XorShift64Star(seed)
    orders = [TaskOrder(tuple(range(T)), 0, True)]
    for k in range(1, n_random + 1):
        orders.append(TaskOrder(tuple(rng.permutation(T)), k, False))
    return orders


def orders_digest(orders: Sequence[TaskOrder]) -> str:
    text = "\n".join(" ".join(map(str, o.perm)) for o in orders)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
