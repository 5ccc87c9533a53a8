import gzip
import struct

import numpy as np
import pytest

from regimecl.data import (
    BadMagicError,
    CountMismatchError,
    Dataset,
    EmptyDatasetError,
    TaskOrder,
    TruncatedFileError,
    limit_per_class,
    load_idx,
    orders_digest,
    sample_orders,
    split_tasks,
    synth_gaussian_tasks,
    task_data_from_split,
    task_data_native,
    write_idx,
)


def _idx_pair(tmp_path, n_img=3, n_lab=3, pixels=None, img_magic=2051, lab_magic=2049, pad=0):
    pixels = bytes(range(n_img * 4)) if pixels is None else pixels
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(struct.pack(">IIII", img_magic, n_img, 2, 2) + pixels[: len(pixels) - pad])
    lab.write_bytes(struct.pack(">II", lab_magic, n_lab) + bytes(i % 10 for i in range(n_lab)))
    return img, lab


def test_idx_reads_and_scales(tmp_path):
    pixels = bytes([0, 255, 51, 102] * 3)
    ds = load_idx(*_idx_pair(tmp_path, pixels=pixels))
    assert ds.inputs.shape == (3, 4)
    np.testing.assert_array_equal(ds.inputs[0], [0.0, 1.0, 0.2, 0.4])
    np.testing.assert_array_equal(ds.labels, [0, 1, 2])


def test_idx_errors(tmp_path):
    with pytest.raises(BadMagicError):
        load_idx(*_idx_pair(tmp_path, img_magic=2049))
    with pytest.raises(BadMagicError):
        load_idx(*_idx_pair(tmp_path, lab_magic=2051))
    with pytest.raises(TruncatedFileError):
        load_idx(*_idx_pair(tmp_path, pad=1))
    with pytest.raises(CountMismatchError):
        load_idx(*_idx_pair(tmp_path, n_lab=2))
    with pytest.raises(EmptyDatasetError):
        load_idx(*_idx_pair(tmp_path, n_img=0, n_lab=0, pixels=b""))
    short = tmp_path / "short"
    short.write_bytes(b"\x00\x00")
    with pytest.raises(TruncatedFileError):
        load_idx(short, short)


def test_idx_round_trip_and_gzip(tmp_path):
    ds = synth_gaussian_tasks(2, 2, 6, 5, 2.0, seed=1)
    write_idx(ds, tmp_path / "i", tmp_path / "l", image_shape=(2, 3))
    back = load_idx(tmp_path / "i", tmp_path / "l")
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert np.max(np.abs(back.inputs - ds.inputs)) <= 0.5 / 255 + 1e-12
    for name in ("i", "l"):
        (tmp_path / f"{name}.gz").write_bytes(gzip.compress((tmp_path / name).read_bytes()))
    gz = load_idx(tmp_path / "i.gz", tmp_path / "l.gz")
    np.testing.assert_array_equal(gz.inputs, back.inputs)


def test_synthetic_is_deterministic_and_scaled():
    a = synth_gaussian_tasks(3, 2, 5, 20, 3.0, seed=4)
    b = synth_gaussian_tasks(3, 2, 5, 20, 3.0, seed=4)
    c = synth_gaussian_tasks(3, 2, 5, 20, 3.0, seed=5)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    assert not np.array_equal(a.inputs, c.inputs)
    assert a.inputs.min() == 0.0 and a.inputs.max() == 1.0
    assert np.bincount(a.labels).tolist() == [20] * 6


def test_zero_separation_puts_every_class_on_the_same_mean():
    ds = synth_gaussian_tasks(2, 2, 4, 4000, 0.0, seed=2)
    means = np.array([ds.inputs[ds.labels == c].mean(axis=0) for c in range(4)])
    # same population mean; sample means differ only by noise of order 1/sqrt(n)
    scale = ds.inputs.std()
    assert np.max(np.abs(means - means.mean(axis=0))) < 5 * scale / np.sqrt(4000)


def test_large_separation_is_linearly_separable():
    """A plain logistic regression fitted by gradient descent should nearly ace it."""
    ds = synth_gaussian_tasks(1, 2, 8, 300, 10.0, seed=3)
    x = np.hstack([ds.inputs, np.ones((len(ds.labels), 1))])
    x[:, :-1] = (x[:, :-1] - x[:, :-1].mean(0)) / x[:, :-1].std(0)
    y = ds.labels
    w = np.zeros(x.shape[1])
    for _ in range(500):
        p = 1 / (1 + np.exp(-x @ w))
        w -= 0.5 * x.T @ (p - y) / len(y)
    assert np.mean((x @ w > 0) == y) >= 0.99


def test_split_owns_classes_and_partitions():
    ds = synth_gaussian_tasks(5, 2, 3, 30, 1.0, seed=0)
    split = split_tasks(ds, 5, 2, 0.25, seed=9)
    assert list(split.classes_of(3)) == [6, 7]
    assert set(ds.labels[split.train[3]]) == {6, 7} and set(ds.labels[split.test[3]]) == {6, 7}
    everything = np.concatenate(split.train + split.test)
    assert sorted(everything.tolist()) == list(range(len(ds.labels)))
    for t in range(5):
        assert len(split.test[t]) == 2 * 8 and len(split.train[t]) == 2 * 22
    tasks = task_data_from_split(ds, split)
    assert set(tasks[3].train.labels.tolist()) == {0, 1} and tasks[3].train.task_id == 3
    again = split_tasks(ds, 5, 2, 0.25, seed=9)
    assert all(np.array_equal(a, b) for a, b in zip(split.test, again.test))


def test_split_rejects_bad_fraction_and_missing_classes():
    ds = synth_gaussian_tasks(2, 2, 3, 10, 1.0, seed=0)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            split_tasks(ds, 2, 2, bad, seed=0)
    with pytest.raises(ValueError):
        split_tasks(ds, 3, 2, 0.5, seed=0)


def test_native_split_and_limit():
    train = synth_gaussian_tasks(2, 2, 3, 10, 1.0, seed=0)
    test = synth_gaussian_tasks(2, 2, 3, 4, 1.0, seed=1)
    small = limit_per_class(train, 3)
    assert np.bincount(small.labels).tolist() == [3, 3, 3, 3]
    tasks = task_data_native(small, test, 2, 2)
    assert tasks[1].test.inputs.shape == (8, 3) and set(tasks[1].test.labels.tolist()) == {0, 1}
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 3)), np.zeros(0, dtype=int))


def test_orders():
    orders = sample_orders(5, 10, seed=123)
    assert len(orders) == 11
    assert orders[0].perm == (0, 1, 2, 3, 4) and orders[0].is_canonical
    assert [o.order_id for o in orders] == list(range(11))
    for o in orders:
        assert sorted(o.perm) == list(range(5))
    assert orders == sample_orders(5, 10, seed=123)
    assert orders_digest(orders) == orders_digest(sample_orders(5, 10, seed=123))
    assert orders_digest(orders) != orders_digest(sample_orders(5, 10, seed=124))
    assert len({o.perm for o in orders}) > 5
    with pytest.raises(ValueError):
        TaskOrder((0, 0, 1), 1)
    with pytest.raises(ValueError):
        sample_orders(3, -1, 0)
