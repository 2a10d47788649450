import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scail import _kernels as K

needs_numba = pytest.mark.skipif(not K.HAS_NUMBA, reason="numba unavailable")

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 15), st.integers(1, 6))
def test_herding_loops_match_numpy(seed, m, d):
    x = np.random.default_rng(seed).normal(size=(m, d))
    assert K.herding_order_numpy(x, m).tolist() == K._herding_order_loops(x, m).tolist()


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(0, 12), st.integers(0, 5), st.integers(1, 14))
def test_mask_loops_match_numpy(seed, n_past, n_new, top_m):
    s = np.random.default_rng(seed).normal(size=(5, n_past + n_new + 1))
    np.testing.assert_array_equal(K.mask_past_numpy(s, n_past, top_m), K._mask_past_loops(s, n_past, top_m))


def test_mask_ties_keep_lower_ids():
    s = np.array([[1.0, 1.0, 1.0, 5.0]])
    np.testing.assert_array_equal(K.mask_past_numpy(s, 3, 2), [[1.0, 1.0, 0.0, 5.0]])
    np.testing.assert_array_equal(K._mask_past_loops(s, 3, 2), [[1.0, 1.0, 0.0, 5.0]])


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 10), st.integers(1, 6), st.integers(1, 5))
def test_distances_loops_match_numpy(seed, n, p, d):
    r = np.random.default_rng(seed)
    x, c = r.normal(size=(n, d)), r.normal(size=(p, d))
    np.testing.assert_allclose(K.sq_distances_numpy(x, c), K._sq_distances_loops(x, c), atol=1e-10)


@needs_numba
@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 15), st.integers(1, 6))
def test_numba_matches_numpy(seed, m, d):
    r = np.random.default_rng(seed)
    x = r.normal(size=(m, d))
    assert K.herding_order_numba(x, m).tolist() == K.herding_order_numpy(x, m).tolist()
    s = r.normal(size=(4, m + 2))
    np.testing.assert_array_equal(K.mask_past_numba(s, m, 3), K.mask_past_numpy(s, m, 3))
    np.testing.assert_allclose(K.sq_distances_numba(x, x[:2]), K.sq_distances_numpy(x, x[:2]), atol=1e-10)


def test_env_flag_selects_numpy():
    env = dict(os.environ, SCAIL_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from scail import _kernels; print(_kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
