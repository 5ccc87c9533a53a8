import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from regimecl.nn import NetworkSpec, init_network
from regimecl.regime import TrainableSubspace, make_depth_regime, project, subspace_inner


@pytest.fixture
def net3():
    return init_network(NetworkSpec(4, (5, 5, 3), 2, 2), 0)


def test_full_depth_is_identity_mask(net3):
    sub = make_depth_regime(net3, 3)
    assert sub.mask.all() and sub.label == "full" and sub.dim_S == net3.spec.num_params


def test_last_block_mask_follows_block_ranges(net3):
    sub = make_depth_regime(net3, 1)
    (a0, a1), (b0, b1), (c0, c1), (h0, h1) = net3.block_ranges
    assert not sub.mask[a0:b1].any()
    assert sub.mask[c0:h1].all()
    assert sub.label == "last_1"
    assert sub.dim_S == (c1 - c0) + (h1 - h0)


def test_depth_regime_is_deterministic_and_immutable(net3):
    a, b = make_depth_regime(net3, 2), make_depth_regime(net3, 2)
    assert np.array_equal(a.mask, b.mask)
    with pytest.raises(ValueError):
        a.mask[0] = True


@pytest.mark.parametrize("k", [0, 4])
def test_depth_out_of_range(net3, k):
    with pytest.raises(ValueError):
        make_depth_regime(net3, k)


def test_project_examples():
    v = np.array([3.0, 4.0, 5.0])
    assert np.array_equal(project(TrainableSubspace([1, 0, 1], "x"), v), [3.0, 0.0, 5.0])
    assert np.array_equal(project(TrainableSubspace([1, 1, 1], "x"), v), v)
    assert np.array_equal(project(TrainableSubspace([0, 0, 0], "x"), v), np.zeros(3))
    with pytest.raises(ValueError):
        project(TrainableSubspace([1, 0], "x"), v)


def test_subspace_inner_examples():
    sub = TrainableSubspace([1, 0], "x")
    assert subspace_inner(sub, np.array([2.0, 7.0]), np.array([3.0, 9.0])) == 6.0
    full = TrainableSubspace([1, 1, 1, 1], "x")
    a = np.array([1.0, 2.0, 0.0, 0.0])
    assert subspace_inner(full, a, a) == 5.0
    assert subspace_inner(full, a, np.array([0.0, 0.0, 3.0, 1.0])) == 0.0


vectors = arrays(np.float64, 12, elements=st.floats(-1e6, 1e6))
masks = arrays(np.bool_, 12)


@given(v=vectors, w=vectors, mask=masks)
def test_projector_algebra(v, w, mask):
    sub = TrainableSubspace(mask, "x")
    pv = project(sub, v)
    assert np.array_equal(project(sub, pv), pv)
    assert np.all(pv[~mask] == 0.0)
    assert np.linalg.norm(pv) <= np.linalg.norm(v)
    assert subspace_inner(sub, v, w) == subspace_inner(sub, w, v)
    assert float(np.dot(v, project(sub, w))) == float(np.dot(project(sub, v), w))
