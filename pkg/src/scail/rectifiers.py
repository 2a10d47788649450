"""
Post-hoc classification layers.

ScaIL keeps the new-class rows of the current model and replaces every
past-class row by its initial classifier, rescaled rank by rank::

    w_sc[h] = mu_cur[r(h)] / mu_init[r(h)] * w[h]

where ``r(h)`` is the rank of ``|w[h]|`` inside the initial row and
``mu_s[r]`` is the mean, over the classes first learned in state ``s``, of
their ``r``-th largest absolute weight. At prediction time only the
``top_m`` largest past-class scores of each sample survive.

The L2 and init-replacement baselines, and the nearest-exemplar-mean
classifier, live here as well.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels, snapshot
from .errors import ConfigurationError, ConsistencyError, InputError, ShapeError, SingularStatisticsError
from .memory import InitClassifierStore, RankStats
from .model import Model, extract

DEFAULT_TOP_M = 10


def _descending_abs_order(rows):
    # stable sort on -|w| keeps the original index order among equal magnitudes
    return np.argsort(-np.abs(rows), axis=-1, kind="stable")


def rank_means(classifiers, state=0) -> RankStats:
    rows = np.atleast_2d(np.asarray(classifiers, dtype=np.float64))
    if rows.shape[0] < 1 or rows.size == 0:
        raise InputError("rank_means needs at least one classifier row")
    sorted_abs = np.take_along_axis(np.abs(rows), _descending_abs_order(rows), axis=1)
    return RankStats(int(state), rows.shape[0], sorted_abs.mean(axis=0))


def rank_of(row) -> np.ndarray:
    """1-based rank of every dimension of ``row`` by descending ``|w|``."""
    row = np.asarray(row, dtype=np.float64)
    order = _descending_abs_order(row)
    ranks = np.empty(row.shape[0], dtype=np.int64)
    ranks[order] = np.arange(1, row.shape[0] + 1)
    return ranks


@dataclass(frozen=True)
class ScaledClassifier:
    class_id: int
    weights: np.ndarray
    source_state: int


def scale_classifier(initial, stats_initial: RankStats, stats_current: RankStats, class_id=-1) -> ScaledClassifier:
    w = np.asarray(initial, dtype=np.float64)
    mu_i = np.asarray(stats_initial.mu, dtype=np.float64)
    mu_k = np.asarray(stats_current.mu, dtype=np.float64)
    if w.ndim != 1 or mu_i.shape != w.shape or mu_k.shape != w.shape:
        raise ShapeError(f"dimension mismatch: row {w.shape}, stats {mu_i.shape} / {mu_k.shape}")
    r = rank_of(w) - 1
    den = mu_i[r]
    num = mu_k[r]
    bad = (den == 0.0) & (w != 0.0)
    if bad.any():
        h = int(np.flatnonzero(bad)[0])
        raise SingularStatisticsError(class_id, int(r[h]) + 1)
    out = np.zeros_like(w)
    live = w != 0.0
    out[live] = (num[live] / den[live]) * w[live]
    return ScaledClassifier(int(class_id), out, int(stats_initial.state))


@dataclass
class RectifiedLayer:
    rows: np.ndarray
    method: str
    n_past: int
    state_index: int
    top_m: int | None = None

    @property
    def class_count(self) -> int:
        return self.rows.shape[0]

    def raw_scores(self, features):
        return np.asarray(features, dtype=np.float64) @ self.rows.T

    def scores(self, features):
        """Scores used for prediction (masked when ``top_m`` is set)."""
        raw = self.raw_scores(features)
        if self.top_m is None:
            return raw
        return _kernels.mask_past(raw, self.n_past, self.top_m)

    def to_bytes(self) -> bytes:
        meta = {
            "method": self.method,
            "n_past": int(self.n_past),
            "state_index": int(self.state_index),
            "top_m": None if self.top_m is None else int(self.top_m),
        }
        return snapshot.dumps("layer", meta, {"rows": self.rows})

    @classmethod
    def from_bytes(cls, raw):
        _, meta, arrays = snapshot.loads(raw, expect_kind="layer")
        return cls(arrays["rows"], meta["method"], meta["n_past"], meta["state_index"], meta["top_m"])


def raw_layer(model: Model, n_past, method="FT") -> RectifiedLayer:
    return RectifiedLayer(model.classifier.copy(), method, int(n_past), model.state_index)


def _past_count(model, store, state):
    past = [c for c in range(model.class_count) if c in store and store.state_of[c] < state]
    n_past = len(past)
    if past != list(range(n_past)):
        raise ConsistencyError("past classes must occupy the leading classifier rows")
    for c in range(n_past, model.class_count):
        if c not in store or store.state_of[c] != state:
            raise ConsistencyError(f"class {c} has no initial classifier from state {state}")
    return n_past


def build_scail_layer(model_k: Model, store: InitClassifierStore, top_m=DEFAULT_TOP_M) -> RectifiedLayer:
    k = model_k.state_index
    n_past = _past_count(model_k, store, k)
    current = store.stats_for(k)
    rows = model_k.classifier.copy()
    for c in range(n_past):
        i = store.state_of[c]
        rows[c] = scale_classifier(store.row(c), store.stats_for(i), current, class_id=c).weights
    if top_m is not None and top_m < 1:
        raise InputError("top_m must be >= 1")
    return RectifiedLayer(rows, "ScaIL", n_past, k, top_m)


def predict_masked(layer: RectifiedLayer, features, top_m=None):
    """Masked score matrix: per sample, past-class scores outside the ``top_m`` largest become 0."""
    m = layer.top_m if top_m is None else top_m
    if m is None:
        return layer.raw_scores(features)
    if m < 1:
        raise InputError("top_m must be >= 1")
    return _kernels.mask_past(layer.raw_scores(features), layer.n_past, m)


def argmax_predictions(scores) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. the lowest class id on ties
    return np.argmax(np.asarray(scores), axis=1)


def l2_normalize_layer(rows) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    zero = norms == 0.0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero classifier row(s) left unnormalized", RuntimeWarning, stacklevel=2)
    out = rows.copy()
    out[~zero] /= norms[~zero, None]
    return out


def build_l2_layer(model_k: Model, n_past) -> RectifiedLayer:
    return RectifiedLayer(l2_normalize_layer(model_k.classifier), "FT_L2", int(n_past), model_k.state_index)


def build_init_layer(model_k: Model, store: InitClassifierStore, normalize=False) -> RectifiedLayer:
    k = model_k.state_index
    n_past = _past_count(model_k, store, k)
    rows = model_k.classifier.copy()
    for c in range(n_past):
        rows[c] = store.row(c)
    if normalize:
        rows = l2_normalize_layer(rows)
    return RectifiedLayer(rows, "FT_init_L2" if normalize else "FT_init", n_past, k)


# ---------------------------------------------------------------------------
# nearest exemplar mean
# ---------------------------------------------------------------------------


def nem_prototypes(model_k: Model, class_samples):
    """Mean current-model feature of each class's exemplars.

    ``class_samples`` is a sequence indexed by class of ``n_c x input_dim``
    arrays.
    """
    protos = np.empty((len(class_samples), model_k.feature_dim))
    for c, xs in enumerate(class_samples):
        xs = np.asarray(xs, dtype=np.float64)
        if xs.shape[0] == 0:
            raise ConfigurationError(f"class {c} has no exemplars; NEM needs at least one per class")
        protos[c] = extract(model_k, xs).mean(axis=0)
    return protos


def nem_scores(prototypes, features):
    """Negative squared distance to every prototype (larger is closer)."""
    return -_kernels.sq_distances(np.asarray(features, dtype=np.float64), prototypes)


def nem_classify(prototypes, features) -> np.ndarray:
    return argmax_predictions(nem_scores(prototypes, features))
