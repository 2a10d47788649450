import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import topk_oracle
from scail.errors import ConsistencyError, InputError
from scail.metrics import averaged_incremental_accuracy, error_taxonomy, gil, score_bias, topk_accuracy


def test_topk_examples(rng):
    s = rng.normal(size=(6, 4))
    y = np.array([0, 3, 1, 2, 2, 0])
    assert topk_accuracy(s, y, 4) == 1.0
    assert topk_accuracy(np.array([[0.1, 0.9]]), [1], 1) == 1.0
    for k in range(1, 5):
        assert topk_accuracy(s, y, k) == pytest.approx(topk_oracle(s.tolist(), y.tolist(), k))


def test_topk_ties_and_bounds():
    # tie at the top: lowest id wins
    assert topk_accuracy(np.array([[1.0, 1.0]]), [0], 1) == 1.0
    assert topk_accuracy(np.array([[1.0, 1.0]]), [1], 1) == 0.0
    with pytest.raises(InputError):
        topk_accuracy(np.zeros((2, 3)), [0, 1], 4)


@given(st.integers(0, 10**6))
def test_topk_monotone_in_k(seed):
    r = np.random.default_rng(seed)
    s = r.normal(size=(8, 6))
    y = r.integers(0, 6, size=8)
    accs = [topk_accuracy(s, y, k) for k in range(1, 7)]
    assert all(a <= b for a, b in zip(accs, accs[1:]))


def test_averaged_incremental():
    assert averaged_incremental_accuracy([0.9, 0.8, 0.6])[0] == pytest.approx(0.7)
    assert averaged_incremental_accuracy([0.4] * 5) == (pytest.approx(0.4), True)
    assert averaged_incremental_accuracy([0.9, 0.5])[0] == 0.5
    assert averaged_incremental_accuracy([0.9]) == (0.9, False)


def test_gil_examples():
    assert gil([92.3], [92.3]) == 0.0
    assert gil([90.0], [92.3]) == pytest.approx(-0.2987, abs=5e-5)
    with pytest.raises(ZeroDivisionError):
        gil([90.0], [100.0])


@given(st.lists(st.tuples(st.floats(0, 99), st.floats(0, 99)), min_size=1, max_size=10), st.randoms())
def test_gil_permutation_invariant(pairs, rnd):
    accs, fulls = zip(*pairs)
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a2, f2 = zip(*shuffled)
    assert gil(accs, fulls) == pytest.approx(gil(a2, f2), abs=1e-9)


@given(st.lists(st.floats(0, 100), min_size=2, max_size=6), st.floats(0, 90), st.floats(-5, 5))
def test_gil_linear_in_each_acc(accs, full, delta):
    bumped = list(accs)
    bumped[0] += delta
    expected = gil(accs, full) + delta / (100.0 - full) / len(accs)
    assert gil(bumped, full) == pytest.approx(expected, abs=1e-9)


CLASS_STATE = {0: 0, 1: 0, 2: 1, 3: 1}


def test_taxonomy_perfect():
    y = np.array([0, 1, 2, 3])
    t = error_taxonomy(y, y, {0, 1}, CLASS_STATE)
    assert (t.c_p, t.c_n, t.e_pp, t.e_pn, t.e_nn, t.e_np) == (2, 2, 0, 0, 0, 0)


def test_taxonomy_constant_new_predictor():
    y = np.array([0, 1, 0, 2, 3, 2])
    t = error_taxonomy(np.full(6, 2), y, {0, 1}, CLASS_STATE)
    assert t.e_pn == 3 and t.c_p == 0 and t.e_pp == 0
    assert (t.c_n, t.e_nn, t.e_np) == (2, 1, 0)


def test_taxonomy_hand_tally():
    scores = np.array([
        [0.1, 0.8, 0.0, 0.0],  # past 0 -> past 1: e_pp
        [0.0, 0.2, 0.9, 0.0],  # past 1 -> new 2: e_pn
        [0.7, 0.0, 0.1, 0.0],  # new 2 -> past 0: e_np
        [0.0, 0.0, 0.1, 0.5],  # new 3 -> new 3: c_n
    ])
    t = error_taxonomy(scores.argmax(axis=1), [0, 1, 2, 3], {0, 1}, CLASS_STATE)
    assert (t.c_p, t.e_pp, t.e_pn, t.c_n, t.e_nn, t.e_np) == (0, 1, 1, 1, 0, 1)
    assert t.e_pp_by_state == {0: 1}


def test_taxonomy_unmapped_class():
    with pytest.raises(ConsistencyError):
        error_taxonomy([5], [0], {0}, CLASS_STATE)


@given(st.integers(0, 10**6), st.integers(1, 7))
def test_taxonomy_partitions(seed, n_past):
    r = np.random.default_rng(seed)
    n_cls = 8
    y = r.integers(0, n_cls, size=40)
    p = r.integers(0, n_cls, size=40)
    state = {c: (0 if c < n_past else 1 + c % 2) for c in range(n_cls)}
    t = error_taxonomy(p, y, range(n_past), state)
    assert t.n_past == int((y < n_past).sum())
    assert t.n_new == int((y >= n_past).sum())
    assert t.total == 40
    assert sum(t.e_pp_by_state.values()) == t.e_pp


def test_score_bias():
    assert score_bias(np.zeros((4, 3)), [0, 1, 2, 2], {0, 1}) == (0.0, 0.0)
    s = np.array([[2.0, 0, 0], [0, 4.0, 0], [0, 0, 1.0], [0, 0, 3.0]])
    assert score_bias(s, [0, 1, 2, 2], {0, 1}) == (3.0, 2.0)
    same = np.array([[1.0, 1.0], [1.0, 1.0]])
    mp, mn = score_bias(same, [0, 1], {0})
    assert mp == mn
    assert score_bias(s, [2, 2, 2, 2], {0, 1})[0] is None
