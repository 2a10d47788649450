import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scail.data import LabeledDataset, load_csv, split_stream, synth_gaussians, write_manifest
from scail.errors import ConfigurationError, ParseError
from scail.model import NetworkConfig, TrainSchedule, forward, init_model, train_state


def test_synth_is_deterministic():
    a = synth_gaussians(4, 3, 5, 2, 2.0, seed=9)
    b = synth_gaussians(4, 3, 5, 2, 2.0, seed=9)
    for x, y in zip(a, b):
        assert np.array_equal(x.samples, y.samples) and np.array_equal(x.labels, y.labels)
    train, test = a
    assert train.samples.shape == (20, 3) and test.samples.shape == (8, 3)
    assert not np.isin(train.samples, test.samples).all(axis=1).any()


def test_zero_separation_is_chance():
    train, test = synth_gaussians(2, 4, 250, 250, 0.0, seed=0)
    m = init_model(NetworkConfig(4, (8,), seed=0), 2)
    m = train_state(m, train.samples, train.labels, TrainSchedule(epochs=10))
    acc = (forward(m, test.samples)[1].argmax(axis=1) == test.labels).mean()
    assert abs(acc - 0.5) <= 0.1


def test_wide_separation_nearest_centroid():
    train, test = synth_gaussians(20, 8, 50, 50, 10.0, seed=0)
    centroids = np.array([train.samples[train.labels == c].mean(axis=0) for c in range(20)])
    d = ((test.samples[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    assert (d.argmin(axis=1) == test.labels).mean() >= 0.95


def test_wide_separation_trained_accuracy():
    train, test = synth_gaussians(20, 8, 50, 50, 10.0, seed=0)
    m = init_model(NetworkConfig(8, (32,), seed=0), 20)
    m = train_state(m, train.samples, train.labels, TrainSchedule(epochs=30, batch_size=32))
    assert (forward(m, test.samples)[1].argmax(axis=1) == test.labels).mean() >= 0.95


def test_csv_basic(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0,1.0,2.0\n1,3.0,4.0\n")
    ds = load_csv(p)
    assert len(ds) == 2 and ds.dim == 2
    np.testing.assert_array_equal(ds.samples, [[1, 2], [3, 4]])


def test_csv_dense_reindex(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("label,x\n9,1\n5,2\n9,3\n")
    ds = load_csv(p, has_header=True)
    assert ds.labels.tolist() == [0, 1, 0]
    assert ds.label_map == {"9": 0, "5": 1}


@pytest.mark.parametrize(
    "text, line",
    [("0,1,2\n1,3\n", 2), ("0,1,2\n1,3,x\n", 2), ("0,1\n\n1,2,3\n", 3)],
)
def test_csv_errors_name_line(tmp_path, text, line):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ParseError) as exc:
        load_csv(p)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_csv_empty(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(ParseError):
        load_csv(p)


def _classes(n, per=2):
    y = np.repeat(np.arange(n), per)
    return LabeledDataset(np.zeros((len(y), 1)), y)


def test_split_100_classes_z10():
    ds = _classes(100, 1)
    s = split_stream(ds, ds, 10)
    assert [len(st.class_ids) for st in s.states] == [10] * 10


def test_split_z1_is_full():
    ds = _classes(7)
    s = split_stream(ds, ds, 1)
    assert sorted(s.states[0].class_ids) == list(range(7))


def test_split_20_z5_disjoint():
    ds = _classes(20)
    s = split_stream(ds, ds, 5, order_seed=3)
    sets = [set(st.class_ids) for st in s.states]
    assert all(len(a) == 4 for a in sets)
    for i in range(5):
        for j in range(i + 1, 5):
            assert not sets[i] & sets[j]
    assert set().union(*sets) == set(range(20))


def test_split_p0_and_errors():
    ds = _classes(10)
    s = split_stream(ds, ds, 4, p0=4)
    assert [len(st.class_ids) for st in s.states] == [4, 2, 2, 2]
    with pytest.raises(ConfigurationError):
        split_stream(ds, ds, 3)
    with pytest.raises(ConfigurationError):
        split_stream(ds, ds, 4, p0=5)
    with pytest.raises(ConfigurationError):
        split_stream(ds, ds, 2, sizes=[3, 3])


def test_split_order_is_seeded():
    ds = _classes(12)
    a = split_stream(ds, ds, 3, order_seed=1).manifest()
    assert a == split_stream(ds, ds, 3, order_seed=1).manifest()
    assert a != split_stream(ds, ds, 3, order_seed=2).manifest()


def test_manifest_file(tmp_path):
    ds = _classes(6)
    s = split_stream(ds, ds, 3)
    write_manifest(s, tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text()) == s.manifest()


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 1000))
def test_stream_partitions_classes(z, p, seed):
    n = z * p
    train = _classes(n, 2)
    test = _classes(n, 1)
    s = split_stream(train, test, z, order_seed=seed)
    ids = [c for st_ in s.states for c in st_.class_ids]
    assert sorted(ids) == list(range(n))
    for k in range(z):
        assert set(test.labels[s.test_indices(k)]) == set(s.states[k].class_ids)
        assert set(test.labels[s.cumulative_test_indices(k)]) == set(s.seen_classes(k))
        assert len(s.cumulative_test_indices(k)) == sum(len(s.test_indices(j)) for j in range(k + 1))
