"""Preservation mechanisms: online EWC, SI, LwF and GEM.

EWC, SI and LwF expose the unscaled gradient of their preservation penalty;
the trainer multiplies by lambda. GEM has no penalty and instead corrects the
current-task gradient through a small dual quadratic program.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .nn import (
    Batch,
    Network,
    backward,
    empirical_fisher_sum,
    forward,
    forward_with_cache,
    log_softmax,
)
from .rng import XorShift64Star

METHOD_NAMES = ("ewc", "si", "lwf", "gem", "sgd")


class EmptyPreservation(Exception):
    """No previous task exists yet, so there is nothing to preserve."""


class GemSolverError(RuntimeError):
    def __init__(self, message: str, iterations: int, kkt_residual: float):
        super().__init__(f"{message} (iterations={iterations}, kkt_residual={kkt_residual:.3e})")
        self.iterations = iterations
        self.kkt_residual = kkt_residual


# ---------------------------------------------------------------- online EWC


@dataclass(frozen=True)
class EwcState:
    fisher: np.ndarray
    anchor: np.ndarray
    gamma: float = 0.9
    lam: float = 1.0

    @classmethod
    def fresh(cls, net: Network, gamma: float = 0.9, lam: float = 1.0) -> "EwcState":
        if not 0.0 < gamma <= 1.0:
            raise ValueError("ewc gamma must be in (0, 1]")
        return cls(np.zeros_like(net.params), net.params.copy(), gamma, lam)


def ewc_consolidate(state: EwcState, net: Network, data: Sequence[Batch]) -> EwcState:
    """fisher <- gamma * fisher + empirical Fisher of the finished task; re-anchor."""
    if not data:
        raise ValueError("ewc_consolidate needs data from the finished task")
    total = np.zeros_like(net.params)
    count = 0
    for batch in data:
        total += empirical_fisher_sum(net, batch)
        count += len(batch)
    fisher = state.gamma * state.fisher + total / count
    return replace(state, fisher=fisher, anchor=net.params.copy())


def ewc_penalty(state: EwcState, theta: np.ndarray) -> float:
    diff = theta - state.anchor
    return float(0.5 * np.sum(state.fisher * diff * diff))


def ewc_penalty_gradient(state: EwcState, theta: np.ndarray) -> np.ndarray:
    return state.fisher * (theta - state.anchor)


# ------------------------------------------------------ synaptic intelligence


@dataclass(frozen=True)
class SiState:
    omega_path: np.ndarray
    importance: np.ndarray
    anchor: np.ndarray
    xi: float = 0.1
    lam: float = 1.0

    @classmethod
    def fresh(cls, net: Network, xi: float = 0.1, lam: float = 1.0) -> "SiState":
        if xi <= 0:
            raise ValueError("si xi must be positive")
        zeros = np.zeros_like(net.params)
        return cls(zeros, zeros.copy(), net.params.copy(), xi, lam)


def si_accumulate_step(state: SiState, g: np.ndarray, delta_theta: np.ndarray) -> SiState:
    return replace(state, omega_path=state.omega_path - g * delta_theta)


def si_consolidate(state: SiState, theta_end: np.ndarray) -> SiState:
    if state.xi <= 0:
        raise ValueError("si xi must be positive")
    drift = theta_end - state.anchor
    gain = np.maximum(state.omega_path, 0.0) / (drift * drift + state.xi)
    return replace(
        state,
        importance=state.importance + gain,
        anchor=np.array(theta_end, dtype=np.float64),
        omega_path=np.zeros_like(state.omega_path),
    )


def si_penalty(state: SiState, theta: np.ndarray) -> float:
    diff = theta - state.anchor
    return float(np.sum(state.importance * diff * diff))


def si_penalty_gradient(state: SiState, theta: np.ndarray) -> np.ndarray:
    return 2.0 * state.importance * (theta - state.anchor)


# ------------------------------------------------- learning without forgetting


@dataclass(frozen=True)
class LwfState:
    teacher: Network | None = None
    temperature: float = 2.0
    lam: float = 1.0
    seen_tasks: frozenset[int] = field(default_factory=frozenset)


def lwf_snapshot(state: LwfState, net: Network, finished_task: int) -> LwfState:
    if state.teacher is not None and state.teacher.spec != net.spec:
        raise ValueError("teacher and student specs differ")
    return replace(
        state,
        teacher=net.with_params(net.params.copy()),
        seen_tasks=state.seen_tasks | {finished_task},
    )


def _softmax_t(z: np.ndarray, temperature: float) -> tuple[np.ndarray, np.ndarray]:
    logp = log_softmax(z / temperature)
    return logp, np.exp(logp)


def lwf_distill_loss(state: LwfState, net: Network, inputs: np.ndarray) -> float:
    if state.teacher is None or not state.seen_tasks:
        raise EmptyPreservation("no teacher snapshot yet")
    t = state.temperature
    zs = forward(net, inputs)
    zt = forward(state.teacher, inputs)
    total = 0.0
    for task in sorted(state.seen_tasks):
        cols = net.spec.head_columns(task)
        logq, _ = _softmax_t(zs[:, cols], t)
        logp, p = _softmax_t(zt[:, cols], t)
        total += float(np.sum(p * (logp - logq)))
    return t * t * total / zs.shape[0]


def lwf_distill_gradient(state: LwfState, net: Network, inputs: np.ndarray) -> tuple[float, np.ndarray]:
    """Temperature-scaled KL(teacher || student) over previous heads, and its gradient."""
    if state.teacher is None or not state.seen_tasks:
        raise EmptyPreservation("no teacher snapshot yet")
    t = state.temperature
    zs, cache = forward_with_cache(net, inputs)
    zt = forward(state.teacher, inputs)
    n = zs.shape[0]
    dlogits = np.zeros_like(zs)
    total = 0.0
    for task in sorted(state.seen_tasks):
        cols = net.spec.head_columns(task)
        logq, q = _softmax_t(zs[:, cols], t)
        logp, p = _softmax_t(zt[:, cols], t)
        total += float(np.sum(p * (logp - logq)))
        # d/dz of t^2 KL(p || softmax(z/t)) = t (q - p)
        dlogits[:, cols] = t * (q - p) / n
    return t * t * total / n, backward(net, cache, dlogits)


# ------------------------------------------------- gradient episodic memory


@dataclass(frozen=True)
class GemState:
    memory: Mapping[int, Batch] = field(default_factory=dict)
    memory_per_task: int = 32
    margin: float = 0.0


def gem_store(state: GemState, task_batches: Sequence[Batch], m: int, seed: int) -> GemState:
    """Keep a seeded subsample of ``m`` examples from the finished task."""
    if m < 1:
        raise ValueError("memory size must be at least 1")
    if not task_batches:
        raise ValueError("no data to store")
    task_id = task_batches[0].task_id
    inputs = np.concatenate([b.inputs for b in task_batches])
    labels = np.concatenate([b.labels for b in task_batches])
    n = inputs.shape[0]
    if n < m:
        warnings.warn(f"task {task_id} has only {n} samples; storing all of them", stacklevel=2)
        keep = np.arange(n)
    else:
        keep = np.array(XorShift64Star(seed).permutation(n)[:m])
    memory = dict(state.memory)
    memory[task_id] = Batch(inputs[keep], labels[keep], task_id)
    return replace(state, memory=memory)


def gem_project(
    g: np.ndarray,
    refs: Sequence[np.ndarray],
    margin: float = 0.0,
    tol: float = 1e-9,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Minimum-norm correction of ``g`` so that <g~, g_k> >= 0 for every reference.

    Solves the dual ``min_{v >= 0} 1/2 v'GG'v + (Gg)'v`` by cyclic coordinate
    descent and returns ``g + G'v``. ``g`` is returned unchanged (same object)
    when no constraint is violated beyond ``-margin``.
    """
    g = np.asarray(g, dtype=np.float64)
    if not refs:
        return g
    G = np.vstack([np.asarray(r, dtype=np.float64) for r in refs])
    if G.shape[1] != g.size:
        raise ValueError("reference gradients must match g in length")
    dots = G @ g
    if np.all(dots >= -margin):
        return g
    H = G @ G.T
    v = np.zeros(len(refs))
    diag = np.diag(H)
    # a zero reference gradient imposes <g~, 0> >= 0, always satisfied
    live = diag > 0.0
    residual = np.inf
    for it in range(1, max_iter + 1):
        for k in np.flatnonzero(live):
            grad_k = H[k] @ v + dots[k]
            v[k] = max(0.0, v[k] - grad_k / diag[k])
        grad = H @ v + dots
        # KKT: grad >= 0 everywhere, complementary slackness where v > 0
        residual = max(
            float(np.max(np.maximum(-grad[live], 0.0), initial=0.0)),
            float(np.max(np.abs(grad[live & (v > 0)]), initial=0.0)),
        )
        if residual <= tol:
            return g + G.T @ v
    raise GemSolverError("GEM dual did not converge", max_iter, residual)
