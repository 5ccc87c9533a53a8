"""Residual MLP with exact manual backpropagation and a flat parameter view.

Layout of the flat parameter vector: for every block, the weight matrix
(row-major, shape ``fan_in x fan_out``) followed by its bias; the multi-head
classifier comes last and maps the final width to ``num_tasks * classes_per_task``
logits. Task ``t`` owns logit columns ``[t*C, (t+1)*C)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .rng import XorShift64Star


class DivergedError(RuntimeError):
    """Raised when a loss evaluates to a non-finite value."""


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    block_widths: tuple[int, ...]
    num_tasks: int
    classes_per_task: int

    def __post_init__(self):
        object.__setattr__(self, "block_widths", tuple(int(w) for w in self.block_widths))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if len(self.block_widths) < 1 or any(w < 1 for w in self.block_widths):
            raise ValueError("need at least one block and positive block widths")
        if self.num_tasks < 2:
            raise ValueError("num_tasks must be at least 2")
        if self.classes_per_task < 2:
            raise ValueError("classes_per_task must be at least 2")

    @property
    def num_blocks(self) -> int:
        return len(self.block_widths)

    @property
    def num_outputs(self) -> int:
        return self.num_tasks * self.classes_per_task

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for every block, then the head."""
        dims = [self.input_dim, *self.block_widths]
        shapes = list(zip(dims[:-1], dims[1:]))
        shapes.append((self.block_widths[-1], self.num_outputs))
        return shapes

    @property
    def num_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes())

    def head_columns(self, task_id: int) -> slice:
        c = self.classes_per_task
        return slice(task_id * c, (task_id + 1) * c)


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    task_id: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ValueError("batch needs a non-empty 2-d input matrix")
        if labels.shape != (inputs.shape[0],):
            raise ValueError("labels must be a vector with one entry per input row")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class Network:
    spec: NetworkSpec
    params: np.ndarray
    block_ranges: tuple[tuple[int, int], ...]

    @classmethod
    def from_params(cls, spec: NetworkSpec, params: np.ndarray) -> "Network":
        params = np.array(params, dtype=np.float64)
        if params.shape != (spec.num_params,):
            raise ValueError(f"expected {spec.num_params} parameters, got {params.shape}")
        ranges = []
        start = 0
        for fi, fo in spec.layer_shapes():
            ranges.append((start, start + fi * fo + fo))
            start += fi * fo + fo
        return cls(spec, params, tuple(ranges))

    @property
    def head_range(self) -> tuple[int, int]:
        return self.block_ranges[-1]

    def with_params(self, params: np.ndarray) -> "Network":
        return Network.from_params(self.spec, params)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Weight/bias views into ``params`` (blocks first, head last)."""
        out = []
        for (start, _), (fi, fo) in zip(self.block_ranges, self.spec.layer_shapes()):
            w = self.params[start:start + fi * fo].reshape(fi, fo)
            b = self.params[start + fi * fo:start + fi * fo + fo]
            out.append((w, b))
        return out


def init_network(spec: NetworkSpec, seed: int) -> Network:
    """Uniform init in [-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = XorShift64Star(seed)
    chunks = []
    for fi, fo in spec.layer_shapes():
        a = math.sqrt(6.0 / (fi + fo))
        chunks.append(np.array(rng.uniform_array(fi * fo, -a, a)))
        chunks.append(np.zeros(fo))
    return Network.from_params(spec, np.concatenate(chunks))


def _has_residual(spec: NetworkSpec, k: int) -> bool:
    dims = [spec.input_dim, *spec.block_widths]
    return dims[k] == dims[k + 1]


def forward_with_cache(net: Network, inputs: np.ndarray):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.spec.input_dim:
        raise ValueError(f"inputs must have shape (n, {net.spec.input_dim}), got {x.shape}")
    layers = net.layers()
    cache = []
    h = x
    for k, (w, b) in enumerate(layers[:-1]):
        z = h @ w + b
        out = np.maximum(z, 0.0)
        if _has_residual(net.spec, k):
            out = out + h
        cache.append((h, z > 0.0))
        h = out
    w, b = layers[-1]
    cache.append((h, None))
    return h @ w + b, cache


def forward(net: Network, inputs: np.ndarray) -> np.ndarray:
    """Logits of shape (n, num_tasks * classes_per_task)."""
    return forward_with_cache(net, inputs)[0]


def backward(net: Network, cache, dlogits: np.ndarray, squared: bool = False) -> np.ndarray:
    """Backpropagate ``dlogits`` to a flat gradient.

    With ``squared=True`` rows of ``dlogits`` are treated as independent
    per-sample gradients and the result is the sum over samples of the
    squared per-sample parameter gradients.
    """
    layers = net.layers()
    grad = np.zeros_like(net.params)
    delta = dlogits
    for k in range(len(layers) - 1, -1, -1):
        h, active = cache[k]
        w, _ = layers[k]
        if k < len(layers) - 1:
            dz = delta * active
        else:
            dz = delta
        start, end = net.block_ranges[k]
        fi, fo = w.shape
        if squared:
            grad[start:start + fi * fo] = ((h * h).T @ (dz * dz)).ravel()
            grad[start + fi * fo:end] = (dz * dz).sum(axis=0)
        else:
            grad[start:start + fi * fo] = (h.T @ dz).ravel()
            grad[start + fi * fo:end] = dz.sum(axis=0)
        if k > 0:
            dh = dz @ w.T
            if k < len(layers) - 1 and _has_residual(net.spec, k):
                dh = dh + delta
            delta = dh
    return grad


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_batch(net: Network, batch: Batch) -> None:
    if not 0 <= batch.task_id < net.spec.num_tasks:
        raise ValueError(f"task_id {batch.task_id} out of range")
    if batch.labels.max() >= net.spec.classes_per_task:
        raise ValueError("label outside [0, classes_per_task)")


def task_loss_and_grad(net: Network, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch's task head and its exact gradient."""
    _check_batch(net, batch)
    logits, cache = forward_with_cache(net, batch.inputs)
    cols = net.spec.head_columns(batch.task_id)
    logp = log_softmax(logits[:, cols])
    n = len(batch)
    rows = np.arange(n)
    loss = float(-logp[rows, batch.labels].mean())
    if not math.isfinite(loss):
        raise DivergedError("task loss is not finite")
    dsel = np.exp(logp)
    dsel[rows, batch.labels] -= 1.0
    dlogits = np.zeros_like(logits)
    dlogits[:, cols] = dsel / n
    return loss, backward(net, cache, dlogits)


def task_loss(net: Network, batch: Batch) -> float:
    _check_batch(net, batch)
    logits = forward(net, batch.inputs)
    logp = log_softmax(logits[:, net.spec.head_columns(batch.task_id)])
    return float(-logp[np.arange(len(batch)), batch.labels].mean())


def empirical_fisher_sum(net: Network, batch: Batch) -> np.ndarray:
    """Sum over samples of squared per-sample gradients of log p(y | x)."""
    _check_batch(net, batch)
    logits, cache = forward_with_cache(net, batch.inputs)
    cols = net.spec.head_columns(batch.task_id)
    dsel = np.exp(log_softmax(logits[:, cols]))
    dsel[np.arange(len(batch)), batch.labels] -= 1.0
    dlogits = np.zeros_like(logits)
    dlogits[:, cols] = dsel
    return backward(net, cache, dlogits, squared=True)


def evaluate_accuracy(net: Network, batches: Sequence[Batch], task_id: int) -> float:
    """Task-head argmax accuracy; ties go to the lowest class index."""
    if not batches:
        raise ValueError("no batches to evaluate")
    correct = total = 0
    cols = net.spec.head_columns(task_id)
    for batch in batches:
        if batch.task_id != task_id:
            raise ValueError("all batches must share task_id")
        pred = np.argmax(forward(net, batch.inputs)[:, cols], axis=1)
        correct += int((pred == batch.labels).sum())
        total += len(batch)
    return correct / total


def finite_diff(f: Callable[[np.ndarray], float], theta: np.ndarray, epsilon: float) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        saved = theta[i]
        theta[i] = saved + epsilon
        up = f(theta)
        theta[i] = saved - epsilon
        down = f(theta)
        theta[i] = saved
        grad[i] = (up - down) / (2.0 * epsilon)
    return grad


def finite_diff_gradient(net: Network, batch: Batch, epsilon: float = 1e-5) -> np.ndarray:
    return finite_diff(lambda p: task_loss(net.with_params(p), batch), net.params, epsilon)
