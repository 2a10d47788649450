"""
Hot loops with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and the environment
variable ``SCAIL_DISABLE_NUMBA`` is unset (or ``0``). Both paths share a
signature and are exercised against each other in the test suite.
"""

import os

import numpy as np

_DISABLE = os.environ.get("SCAIL_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLE:
        raise ImportError("numba disabled by SCAIL_DISABLE_NUMBA")
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# herding
# ---------------------------------------------------------------------------


def herding_order_numpy(features, q):
    m, d = features.shape
    mu = features.mean(axis=0)
    selected = np.zeros(m, dtype=np.bool_)
    running = np.zeros(d)
    order = np.empty(q, dtype=np.int64)
    for t in range(1, q + 1):
        cand = (running[None, :] + features) / t
        dist = ((mu[None, :] - cand) ** 2).sum(axis=1)
        dist[selected] = np.inf
        best = int(np.argmin(dist))  # first index on ties
        order[t - 1] = best
        selected[best] = True
        running += features[best]
    return order


def _herding_order_loops(features, q):
    m, d = features.shape
    mu = np.zeros(d)
    for i in range(m):
        for j in range(d):
            mu[j] += features[i, j]
    for j in range(d):
        mu[j] /= m
    selected = np.zeros(m, dtype=np.bool_)
    running = np.zeros(d)
    order = np.empty(q, dtype=np.int64)
    for t in range(1, q + 1):
        best = -1
        best_dist = np.inf
        for i in range(m):
            if selected[i]:
                continue
            dist = 0.0
            for j in range(d):
                diff = mu[j] - (running[j] + features[i, j]) / t
                dist += diff * diff
            if dist < best_dist:
                best_dist = dist
                best = i
        order[t - 1] = best
        selected[best] = True
        for j in range(d):
            running[j] += features[best, j]
    return order


# ---------------------------------------------------------------------------
# per-sample top-m masking of past-class scores
# ---------------------------------------------------------------------------


def mask_past_numpy(scores, n_past, top_m):
    out = scores.copy()
    if n_past <= top_m:
        return out
    past = scores[:, :n_past]
    # stable descending order: larger score first, lower class id on ties
    order = np.argsort(-past, axis=1, kind="stable")
    drop = order[:, top_m:]
    rows = np.arange(scores.shape[0])[:, None]
    out[rows, drop] = 0.0
    return out


def _mask_past_loops(scores, n_past, top_m):
    out = scores.copy()
    if n_past <= top_m:
        return out
    n = scores.shape[0]
    for s in range(n):
        # a past class is dropped when at least top_m entries outrank it
        for c in range(n_past):
            v = scores[s, c]
            ahead = 0
            for o in range(n_past):
                w = scores[s, o]
                if w > v or (w == v and o < c):
                    ahead += 1
            if ahead >= top_m:
                out[s, c] = 0.0
    return out


# ---------------------------------------------------------------------------
# squared euclidean distances (NEM)
# ---------------------------------------------------------------------------


def sq_distances_numpy(x, protos):
    diff = x[:, None, :] - protos[None, :, :]
    return (diff * diff).sum(axis=2)


def _sq_distances_loops(x, protos):
    n, d = x.shape
    c = protos.shape[0]
    out = np.empty((n, c))
    for i in range(n):
        for k in range(c):
            acc = 0.0
            for j in range(d):
                diff = x[i, j] - protos[k, j]
                acc += diff * diff
            out[i, k] = acc
    return out


if HAS_NUMBA:
    herding_order_numba = numba.njit(cache=False)(_herding_order_loops)
    mask_past_numba = numba.njit(cache=False)(_mask_past_loops)
    sq_distances_numba = numba.njit(cache=False)(_sq_distances_loops)
else:  # pragma: no cover - exercised only without numba
    herding_order_numba = None
    mask_past_numba = None
    sq_distances_numba = None


def herding_order(features, q):
    features = np.ascontiguousarray(features, dtype=np.float64)
    if HAS_NUMBA:
        return herding_order_numba(features, int(q))
    return herding_order_numpy(features, int(q))


def mask_past(scores, n_past, top_m):
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if HAS_NUMBA:
        return mask_past_numba(scores, int(n_past), int(top_m))
    return mask_past_numpy(scores, int(n_past), int(top_m))


def sq_distances(x, protos):
    x = np.ascontiguousarray(x, dtype=np.float64)
    protos = np.ascontiguousarray(protos, dtype=np.float64)
    if HAS_NUMBA:
        return sq_distances_numba(x, protos)
    return sq_distances_numpy(x, protos)
