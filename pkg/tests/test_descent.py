import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regimecl.descent import (
    PowerIterationError,
    QuadraticObjective,
    check_descent,
    fuzz_descent,
    quad_value_and_grad,
    smoothness_constant,
)
from regimecl.regime import TrainableSubspace


def full(d):
    return TrainableSubspace(np.ones(d, dtype=bool), "full")


def test_isotropic_example():
    # J = theta'theta, grad = 2 theta, L = 2; eta = 1/2 lands exactly on the minimum
    obj = QuadraticObjective(2 * np.eye(3), np.zeros(3))
    assert smoothness_constant(obj) == pytest.approx(2.0, rel=1e-12)
    theta = np.array([1.0, -2.0, 0.5])
    report = check_descent(obj, theta, full(3), eta=0.5, L=2.0)
    assert report.value == pytest.approx(5.25)
    assert report.value_next == 0.0
    assert report.rhs == pytest.approx(5.25 - 0.25 * 21.0)
    assert report.holds and report.holds_intermediate


def test_masked_example():
    obj = QuadraticObjective(np.diag([4.0, 1.0]), np.array([0.0, 1.0]))
    sub = TrainableSubspace(np.array([False, True]), "last")
    report = check_descent(obj, np.array([1.0, 1.0]), sub, eta=0.25)
    # only the second coordinate moves: grad_2 = 2, theta_2 -> 0.5
    assert report.proj_grad_sq == 4.0
    assert report.value_next == pytest.approx(0.5 * 4 + 0.5 * 0.25 + 0.5)
    assert report.holds


def test_zero_matrix_and_empty_mask():
    obj = QuadraticObjective(np.zeros((2, 2)), np.array([1.0, 0.0]))
    assert smoothness_constant(obj) == 0.0
    none = TrainableSubspace(np.zeros(2, dtype=bool), "none")
    r = check_descent(obj, np.ones(2), none, eta=1.0)
    assert r.value_next == r.value and r.proj_grad_sq == 0.0


def test_eta_outside_range_rejected():
    obj = QuadraticObjective(2 * np.eye(2), np.zeros(2))
    for eta in (0.0, -1.0, 0.5000001):
        with pytest.raises(ValueError):
            check_descent(obj, np.ones(2), full(2), eta, L=2.0)


def test_objective_validation():
    with pytest.raises(ValueError):
        QuadraticObjective(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2))
    with pytest.raises(ValueError):
        QuadraticObjective(np.eye(2), np.zeros(3))
    with pytest.raises(ValueError):
        quad_value_and_grad(QuadraticObjective(np.eye(2), np.zeros(2)), np.zeros(3))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(4, 5))
    obj = QuadraticObjective.from_factor(M, rng.normal(size=5))
    theta = rng.normal(size=5)
    _, g = quad_value_and_grad(obj, theta)
    eps = 1e-6
    fd = [(quad_value_and_grad(obj, theta + eps * e)[0] - quad_value_and_grad(obj, theta - eps * e)[0]) / (2 * eps)
          for e in np.eye(5)]
    np.testing.assert_allclose(g, fd, rtol=1e-7, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 14), st.integers(0, 2**32 - 1))
def test_power_iteration_matches_eigvalsh(d, rows, seed):
    rng = np.random.default_rng(seed)
    obj = QuadraticObjective.from_factor(rng.normal(size=(rows, d)), np.zeros(d))
    want = np.linalg.eigvalsh(obj.A)[-1]
    assert smoothness_constant(obj, seed=seed % 1000) == pytest.approx(want, rel=1e-8, abs=1e-12)


def test_power_iteration_reports_non_convergence():
    # two nearly equal top eigenvalues converge slowly
    obj = QuadraticObjective(np.diag([1.0, 1.0 - 1e-9, 0.1]), np.zeros(3))
    with pytest.raises(PowerIterationError):
        smoothness_constant(obj, rtol=1e-300, max_iter=5)


def test_fuzz_has_no_violations():
    summary = fuzz_descent(1000, dim_max=20, seed=0)
    assert summary.trials == 1000
    assert summary.violations == 0 and summary.intermediate_violations == 0
    assert any(r.proj_grad_sq > 0 for r in summary.reports)


def test_fuzz_at_the_boundary_step():
    summary = fuzz_descent(300, dim_max=10, seed=7, boundary=True)
    assert summary.violations == 0
    assert all(r.L == 0 or r.eta == pytest.approx(1 / r.L, rel=1e-15) for r in summary.reports)


def test_bound_fails_for_oversized_steps():
    """Sanity check that the bound has teeth: eta = 3/L on a 1-D quadratic overshoots."""
    obj = QuadraticObjective(np.array([[1.0]]), np.zeros(1))
    theta = np.array([1.0])
    value, g = quad_value_and_grad(obj, theta)
    eta = 3.0
    nxt, _ = quad_value_and_grad(obj, theta - eta * g)
    assert nxt > value - eta / 2 * g @ g
