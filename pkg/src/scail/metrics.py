"""Accuracy, the G_IL aggregate, the past/new error taxonomy and score bias."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, InputError

ACC_MAX = 100.0


def topk_accuracy(scores, labels, k) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, n_cls = scores.shape
    if not 1 <= k <= n_cls:
        raise InputError(f"K={k} outside [1, {n_cls}]")
    if n == 0:
        return 0.0
    # stable descending order: lower class id wins ties
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float((order == labels[:, None]).any(axis=1).mean())


def averaged_incremental_accuracy(per_state):
    """Mean accuracy over states 1..Z-1.

    Returns ``(value, incremental)``; with a single state the value is that
    state's accuracy and ``incremental`` is False.
    """
    per_state = [float(a) for a in per_state]
    if not per_state:
        raise InputError("no per-state accuracies")
    if len(per_state) == 1:
        return per_state[0], False
    return float(np.mean(per_state[1:])), True


def gil(accuracies, full, acc_max=ACC_MAX) -> float:
    """Mean normalized gap to the Full upper bound.

    ``accuracies`` and ``full`` are same-length sequences (percent), one
    entry per tested configuration; a scalar ``full`` is broadcast.
    """
    acc = np.asarray(accuracies, dtype=np.float64).ravel()
    full = np.broadcast_to(np.asarray(full, dtype=np.float64), acc.shape)
    if acc.size == 0:
        raise InputError("G_IL needs at least one configuration")
    den = acc_max - full
    if np.any(den == 0.0):
        raise ZeroDivisionError("acc_Full equals acc_Max")
    return float(np.mean((acc - full) / den))


@dataclass
class Taxonomy:
    c_p: int = 0
    e_pp: int = 0
    e_pn: int = 0
    c_n: int = 0
    e_nn: int = 0
    e_np: int = 0
    # initial state of the predicted class -> e(p,p) count
    e_pp_by_state: dict = field(default_factory=dict)

    @property
    def n_past(self):
        return self.c_p + self.e_pp + self.e_pn

    @property
    def n_new(self):
        return self.c_n + self.e_nn + self.e_np

    @property
    def total(self):
        return self.n_past + self.n_new

    def to_dict(self):
        return {
            "c_p": self.c_p,
            "e_pp": self.e_pp,
            "e_pn": self.e_pn,
            "c_n": self.c_n,
            "e_nn": self.e_nn,
            "e_np": self.e_np,
            "e_pp_by_state": {str(k): v for k, v in sorted(self.e_pp_by_state.items())},
        }


def error_taxonomy(predictions, labels, past_classes, class_state) -> Taxonomy:
    """Top-1 outcome counts split by past/new membership of label and prediction.

    ``class_state`` maps every class id to the state that introduced it;
    it is used both to check coverage and to break e(p,p) down by the
    predicted class's initial state.
    """
    preds = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise InputError("predictions and labels differ in length")
    past = set(int(c) for c in past_classes)
    for c in np.unique(np.concatenate([labels, preds])):
        if int(c) not in class_state:
            raise ConsistencyError(f"class {int(c)} has no known state")
    t = Taxonomy()
    for y, p in zip(labels.tolist(), preds.tolist()):
        y_past = y in past
        p_past = p in past
        if y_past:
            if p == y:
                t.c_p += 1
            elif p_past:
                t.e_pp += 1
                s = class_state[p]
                t.e_pp_by_state[s] = t.e_pp_by_state.get(s, 0) + 1
            else:
                t.e_pn += 1
        else:
            if p == y:
                t.c_n += 1
            elif p_past:
                t.e_np += 1
            else:
                t.e_nn += 1
    return t


def score_bias(scores, labels, past_classes):
    """Mean raw score of the true class, for past-class and new-class samples.

    A group without samples yields ``None``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    true = scores[np.arange(len(labels)), labels]
    is_past = np.isin(labels, np.asarray(sorted(past_classes), dtype=np.int64))
    mean_past = float(true[is_past].mean()) if is_past.any() else None
    mean_new = float(true[~is_past].mean()) if (~is_past).any() else None
    return mean_past, mean_new
