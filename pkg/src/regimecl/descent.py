"""Numerical check of the projected-gradient progress bound on quadratics.

For ``J(theta) = 1/2 theta'A theta + b'theta`` with ``A`` PSD, ``J`` is
L-smooth with ``L = lambda_max(A)``. One projected step
``theta+ = theta - eta * P_S grad J(theta)`` with ``0 < eta <= 1/L`` must satisfy

    J(theta+) <= J(theta) - eta/2 * ||P_S grad J(theta)||^2

and, for any eta, the sharper intermediate bound with ``eta - L eta^2 / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .regime import TrainableSubspace, project
from .rng import XorShift64Star


class PowerIterationError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadraticObjective:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or b.shape != (A.shape[0],):
            raise ValueError("A must be square and b must match its size")
        if np.max(np.abs(A - A.T), initial=0.0) != 0.0:
            raise ValueError("A must be exactly symmetric")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_factor(cls, M: np.ndarray, b: np.ndarray) -> "QuadraticObjective":
        A = M.T @ M
        return cls(0.5 * (A + A.T), b)

    @property
    def dim(self) -> int:
        return self.b.size


@dataclass(frozen=True)
class DescentReport:
    value: float
    value_next: float
    proj_grad_sq: float
    eta: float
    L: float
    rhs: float  # J - eta/2 ||P g||^2
    rhs_intermediate: float  # J - eta ||P g||^2 + L eta^2 / 2 ||P g||^2
    tol: float
    holds: bool
    holds_intermediate: bool

    @property
    def lhs(self) -> float:
        return self.value_next


def quad_value_and_grad(obj: QuadraticObjective, theta: np.ndarray) -> tuple[float, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != obj.b.shape:
        raise ValueError("theta does not match the objective dimension")
    Atheta = obj.A @ theta
    return float(0.5 * theta @ Atheta + obj.b @ theta), Atheta + obj.b


def smoothness_constant(
    obj: QuadraticObjective, rtol: float = 1e-10, max_iter: int = 200_000, seed: int = 0
) -> float:
    """Largest eigenvalue of A by power iteration on the Rayleigh quotient."""
    A = obj.A
    if not np.any(A):
        return 0.0
    rng = XorShift64Star(seed)
    v = np.array(rng.normal_array(obj.dim))
    v /= np.linalg.norm(v)
    estimate = float(v @ A @ v)
    for _ in range(max_iter):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start vector fell in the null space; restart from a fresh draw
            v = np.array(rng.normal_array(obj.dim))
            v /= np.linalg.norm(v)
            continue
        v = w / norm
        Av = A @ v
        new = float(v @ Av)
        # a small eigen-residual keeps slow convergence from stopping early
        if abs(new - estimate) <= rtol * abs(new) and np.linalg.norm(Av - new * v) <= math.sqrt(rtol) * abs(new):
            return new
        estimate = new
    raise PowerIterationError(f"power iteration did not reach rtol={rtol} in {max_iter} iterations")


def check_descent(
    obj: QuadraticObjective,
    theta: np.ndarray,
    sub: TrainableSubspace,
    eta: float,
    L: float | None = None,
) -> DescentReport:
    if L is None:
        L = smoothness_constant(obj)
    if not eta > 0 or (L > 0 and eta > 1.0 / L):
        raise ValueError(f"eta={eta} outside (0, 1/L] with L={L}")
    value, grad = quad_value_and_grad(obj, theta)
    pg = project(sub, grad)
    pg_sq = float(pg @ pg)
    value_next, _ = quad_value_and_grad(obj, theta - eta * pg)
    tol = 1e-9 * (1.0 + abs(value))
    rhs = value - 0.5 * eta * pg_sq
    rhs_mid = value - eta * pg_sq + 0.5 * L * eta * eta * pg_sq
    return DescentReport(
        value=value,
        value_next=value_next,
        proj_grad_sq=pg_sq,
        eta=eta,
        L=L,
        rhs=rhs,
        rhs_intermediate=rhs_mid,
        tol=tol,
        holds=value_next <= rhs + tol,
        holds_intermediate=value_next <= rhs_mid + tol,
    )


@dataclass
class FuzzSummary:
    trials: int
    violations: int
    intermediate_violations: int
    reports: list[DescentReport]


def fuzz_descent(trials: int, dim_max: int = 20, seed: int = 0, boundary: bool = False) -> FuzzSummary:
    """Random PSD quadratics, points, masks and step sizes; count bound violations.

    With ``boundary=True`` every trial uses eta = 1/L exactly.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = XorShift64Star(seed)
    reports = []
    violations = mid_violations = 0
    for trial in range(trials):
        d = 1 + rng.randbelow(dim_max)
        rows = 1 + rng.randbelow(d + 2)
        scale = math.exp(4.0 * rng.uniform() - 2.0)
        M = np.array(rng.normal_array(rows * d)).reshape(rows, d) * scale
        obj = QuadraticObjective.from_factor(M, np.array(rng.normal_array(d)))
        theta = np.array(rng.normal_array(d)) * 3.0
        mask = np.array([rng.uniform() < 0.5 for _ in range(d)])
        L = smoothness_constant(obj, seed=trial)
        if L == 0.0:
            eta = 1.0
        elif boundary:
            eta = 1.0 / L
        else:
            eta = (1.0 - rng.uniform()) / L  # (0, 1/L]
        report = check_descent(obj, theta, TrainableSubspace(mask, "fuzz"), eta, L)
        violations += not report.holds
        mid_violations += not report.holds_intermediate
        reports.append(report)
    return FuzzSummary(trials, violations, mid_violations, reports)
