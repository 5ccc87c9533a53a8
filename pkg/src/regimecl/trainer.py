"""Projected SGD over a fixed trainable subspace, with per-step instrumentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .data import TaskData, TaskOrder
from .methods import (
    EmptyPreservation,
    EwcState,
    GemState,
    LwfState,
    SiState,
    ewc_consolidate,
    ewc_penalty_gradient,
    gem_project,
    gem_store,
    lwf_distill_gradient,
    lwf_snapshot,
    si_accumulate_step,
    si_consolidate,
    si_penalty_gradient,
)
from .metrics import AccuracyMatrix
from .nn import Batch, DivergedError, Network, NetworkSpec, evaluate_accuracy, init_network, task_loss_and_grad
from .regime import TrainableSubspace, make_depth_regime, project
from .rng import XorShift64Star, hash64

MethodState = EwcState | SiState | LwfState | GemState | None


@dataclass(frozen=True)
class TrainHyper:
    eta: float = 0.05
    epochs_per_task: int = 5
    batch_size: int = 64
    lam: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.epochs_per_task < 0:
            raise ValueError("epochs_per_task must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


@dataclass(frozen=True)
class StepRecord:
    task_index: int
    step: int
    loss_task: float
    norm_g: float
    norm_r: float
    gamma_interaction: float
    norm_projected_update_sq: float
    lam: float
    # smallest <g~, g_k> over GEM references; None when GEM did not run
    constraint_min: float | None = None


@dataclass
class RunResult:
    accuracy_matrix: AccuracyMatrix
    steps: list[StepRecord]
    regime: str
    method: str
    order: TaskOrder
    seed: int
    task_grad_means: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "regime": self.regime,
            "method": self.method,
            "order_id": self.order.order_id,
            "order": list(self.order.perm),
            "seed": self.seed,
            "accuracy_matrix": self.accuracy_matrix.to_list(),
            "task_grad_means": list(self.task_grad_means),
        }


def projected_step(
    theta: np.ndarray,
    g: np.ndarray,
    r: np.ndarray,
    sub: TrainableSubspace,
    hyper: TrainHyper,
    task_index: int = 0,
    step: int = 0,
    loss_task: float = math.nan,
) -> tuple[np.ndarray, StepRecord]:
    """theta - eta * P_S(g + lam * r), with the norms and interaction of both signals."""
    for name, vec in (("theta", theta), ("g", g), ("r", r)):
        if not np.all(np.isfinite(vec)):
            raise DivergedError(f"non-finite {name} at task {task_index}, step {step}")
    gs = project(sub, g)
    rs = project(sub, r)
    update = project(sub, gs + hyper.lam * rs)
    rec = StepRecord(
        task_index=task_index,
        step=step,
        loss_task=loss_task,
        norm_g=float(np.linalg.norm(gs)),
        norm_r=float(np.linalg.norm(rs)),
        gamma_interaction=float(np.dot(gs, rs)),
        norm_projected_update_sq=float(np.dot(update, update)),
        lam=hyper.lam,
    )
    return theta - hyper.eta * update, rec


def minibatches(data: Batch, batch_size: int, seed: int) -> list[Batch]:
    perm = np.array(XorShift64Star(seed).permutation(len(data)))
    return [
        Batch(data.inputs[idx], data.labels[idx], data.task_id)
        for idx in (perm[i:i + batch_size] for i in range(0, len(data), batch_size))
    ]


def preservation_signal(state: MethodState, net: Network, batch: Batch) -> np.ndarray:
    """Unscaled preservation gradient; zero for GEM, plain SGD and empty LwF."""
    if isinstance(state, EwcState):
        return ewc_penalty_gradient(state, net.params)
    if isinstance(state, SiState):
        return si_penalty_gradient(state, net.params)
    if isinstance(state, LwfState):
        try:
            return lwf_distill_gradient(state, net, batch.inputs)[1]
        except EmptyPreservation:
            pass
    return np.zeros_like(net.params)


def train_task(
    net: Network,
    state: MethodState,
    sub: TrainableSubspace,
    task_data: Batch,
    hyper: TrainHyper,
    rng_seed: int,
    task_index: int = 0,
    on_step: Callable[[StepRecord], None] | None = None,
) -> tuple[Network, MethodState, list[StepRecord]]:
    if len(task_data) == 0:
        raise ValueError("task_data is empty")
    theta = net.params.copy()
    records: list[StepRecord] = []
    step = 0
    for epoch in range(hyper.epochs_per_task):
        for batch in minibatches(task_data, hyper.batch_size, hash64(rng_seed, task_data.task_id, epoch)):
            cur = net.with_params(theta)
            try:
                loss, g = task_loss_and_grad(cur, batch)
            except DivergedError as exc:
                raise DivergedError(f"{exc} at task {task_index}, step {step}") from exc
            step_hyper = hyper
            constraint_min = None
            if isinstance(state, GemState) and state.memory:
                gs = project(sub, g)
                refs = [project(sub, task_loss_and_grad(cur, mem)[1]) for mem in state.memory.values()]
                g_tilde = gem_project(gs, refs, state.margin)
                constraint_min = float(min(np.dot(g_tilde, ref) for ref in refs))
                g, r = gs, g_tilde - gs
                step_hyper = replace(hyper, lam=1.0)
            else:
                r = preservation_signal(state, cur, batch)
            new_theta, rec = projected_step(theta, g, r, sub, step_hyper, task_index, step, loss)
            if constraint_min is not None:
                rec = replace(rec, constraint_min=constraint_min)
            if isinstance(state, SiState):
                composite = project(sub, g + step_hyper.lam * r)
                state = si_accumulate_step(state, composite, new_theta - theta)
            theta = new_theta
            records.append(rec)
            if on_step is not None:
                on_step(rec)
            step += 1
    return net.with_params(theta), state, records


def make_method_state(name: str, net: Network, params: Mapping[str, float] | None = None) -> MethodState:
    params = dict(params or {})
    if name == "ewc":
        return EwcState.fresh(net, gamma=params.get("gamma", 0.9))
    if name == "si":
        return SiState.fresh(net, xi=params.get("xi", 0.1))
    if name == "lwf":
        return LwfState(temperature=params.get("temperature", 2.0))
    if name == "gem":
        return GemState(memory_per_task=int(params.get("memory_per_task", 32)), margin=params.get("margin", 0.0))
    if name == "sgd":
        return None
    raise ValueError(f"unknown method {name!r}")


def consolidate(state: MethodState, net: Network, data: Batch, seed: int) -> MethodState:
    """Task-boundary hook for every method."""
    if isinstance(state, EwcState):
        return ewc_consolidate(state, net, [data])
    if isinstance(state, SiState):
        return si_consolidate(state, net.params)
    if isinstance(state, LwfState):
        return lwf_snapshot(state, net, data.task_id)
    if isinstance(state, GemState):
        return gem_store(state, [data], state.memory_per_task, hash64(seed, "gem", data.task_id))
    return state


def run_sequence(
    spec: NetworkSpec,
    k_blocks: int,
    method: str,
    order: TaskOrder,
    hyper: TrainHyper,
    tasks: Mapping[int, TaskData],
    init_seed: int,
    data_seed: int,
    run_seed: int | None = None,
    method_params: Mapping[str, float] | None = None,
    on_step: Callable[[StepRecord], None] | None = None,
) -> RunResult:
    """Train the tasks of ``order`` in sequence and fill the accuracy matrix.

    ``init_seed`` and ``data_seed`` drive initialization and minibatch order and
    are meant to be shared by every method and regime of one task order;
    ``run_seed`` only feeds method-internal randomness (GEM subsampling).
    """
    run_seed = data_seed if run_seed is None else run_seed
    net = init_network(spec, init_seed)
    sub = make_depth_regime(net, k_blocks)
    state = make_method_state(method, net, method_params)
    n = len(order.perm)
    matrix = AccuracyMatrix.empty(n)
    steps: list[StepRecord] = []
    grad_means: list[float] = []
    for t, task_id in enumerate(order.perm):
        net, state, records = train_task(net, state, sub, tasks[task_id].train, hyper, data_seed, t, on_step)
        steps.extend(records)
        grad_means.append(
            float(np.mean([math.sqrt(r.norm_projected_update_sq) for r in records])) if records else 0.0
        )
        state = consolidate(state, net, tasks[task_id].train, run_seed)
        for i in range(t + 1):
            seen = order.perm[i]
            matrix.set(t, i, evaluate_accuracy(net, [tasks[seen].test], seen))
    return RunResult(matrix, steps, sub.label, method, order, run_seed, grad_means)
