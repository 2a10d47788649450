"""
Bounded exemplar memory, herding selection, and the store of initial
classifiers.

Classes are addressed by their *stream position*: the order in which the
incremental stream introduces them, which is also their row index in the
classification layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels, snapshot
from .errors import ConsistencyError, InputError

SELECTIONS = ("random", "herding")


def herding_select(features, q) -> np.ndarray:
    """Greedy herding order of ``q`` indices out of ``m`` feature rows.

    Step ``t`` adds the unselected row that brings the mean of the selected
    set closest (Euclidean) to the mean of all rows. Ties go to the lowest
    index. The returned order is the selection order, so any prefix is the
    selection for a smaller quota.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise InputError("features must be an m x D matrix")
    m = features.shape[0]
    if not 1 <= q <= m:
        raise InputError(f"quota must lie in [1, {m}], got {q}")
    return np.asarray(_kernels.herding_order(features, q), dtype=np.int64)


def random_select(m, q, rng) -> np.ndarray:
    if not 0 <= q <= m:
        raise InputError(f"quota must lie in [0, {m}], got {q}")
    return rng.permutation(m)[:q].astype(np.int64)


def quotas(capacity, n_classes):
    """Per-class quotas: ``capacity // n`` each, remainder to the lowest ids."""
    if n_classes <= 0:
        return []
    base, rem = divmod(int(capacity), int(n_classes))
    return [base + (1 if c < rem else 0) for c in range(n_classes)]


@dataclass(frozen=True)
class MemoryPolicy:
    capacity: int
    selection: str = "random"
    seed: int = 0

    def __post_init__(self):
        if self.capacity < 0:
            raise InputError("memory capacity must be non-negative")
        if self.selection not in SELECTIONS:
            raise InputError(f"selection must be one of {SELECTIONS}, got {self.selection!r}")


@dataclass
class ExemplarMemory:
    """Per-class ordered exemplar lists.

    ``entries[c]`` holds training-set indices of class ``c`` in selection
    order; ``ranks[c]`` the matching provenance (herding step or random
    draw position, 0-based).
    """

    capacity: int
    entries: dict = field(default_factory=dict)
    ranks: dict = field(default_factory=dict)

    def total(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def counts(self):
        return {c: len(v) for c, v in sorted(self.entries.items())}

    def indices(self) -> np.ndarray:
        if not self.entries:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.asarray(self.entries[c], dtype=np.int64) for c in sorted(self.entries)])

    def check(self):
        if self.total() > self.capacity:
            raise ConsistencyError(f"memory holds {self.total()} exemplars, capacity {self.capacity}")

    def to_manifest(self, state_index):
        return {
            "version": 1,
            "state": int(state_index),
            "capacity": int(self.capacity),
            "classes": [
                {
                    "class": int(c),
                    "indices": [int(i) for i in self.entries[c]],
                    "ranks": [int(r) for r in self.ranks[c]],
                }
                for c in sorted(self.entries)
            ],
        }

    @classmethod
    def from_manifest(cls, d):
        mem = cls(capacity=int(d["capacity"]))
        for item in d["classes"]:
            mem.entries[int(item["class"])] = list(item["indices"])
            mem.ranks[int(item["class"])] = list(item["ranks"])
        return mem


def rebalance_memory(memory: ExemplarMemory, new_class_exemplars, n_classes) -> ExemplarMemory:
    """Insert new classes and truncate every class to its quota for ``n_classes``.

    ``new_class_exemplars`` maps class -> (indices, ranks) in selection
    order, at least as long as that class's quota. Truncation keeps
    prefixes, so earlier selections are never reordered.
    """
    q = quotas(memory.capacity, n_classes)
    out = ExemplarMemory(memory.capacity)
    merged = {c: (list(memory.entries[c]), list(memory.ranks[c])) for c in memory.entries}
    for c, (idx, rk) in new_class_exemplars.items():
        if c in merged:
            raise ConsistencyError(f"class {c} already has exemplars in memory")
        merged[c] = (list(idx), list(rk))
    for c in range(n_classes):
        # a class with fewer samples than its quota keeps all of them
        idx, rk = merged.get(c, ([], []))
        out.entries[c] = idx[: q[c]]
        out.ranks[c] = rk[: q[c]]
    out.check()
    return out


@dataclass(frozen=True)
class RankStats:
    state: int
    class_count: int
    mu: np.ndarray

    def to_dict(self):
        return {"state": int(self.state), "class_count": int(self.class_count), "mu": [float(v) for v in self.mu]}


class InitClassifierStore:
    """Classifier rows as learned in each class's initial state, plus per-state rank stats.

    Entries are written once; a second write for the same class or state
    raises.
    """

    def __init__(self, feature_dim):
        self.feature_dim = int(feature_dim)
        self.rows = {}  # class position -> np.ndarray (D,)
        self.state_of = {}  # class position -> initial state index
        self.stats = {}  # state index -> RankStats

    def __contains__(self, c):
        return c in self.rows

    def __len__(self):
        return len(self.rows)

    def record(self, state, class_ids, rows, stats: RankStats):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape != (len(class_ids), self.feature_dim):
            raise ConsistencyError(f"expected {len(class_ids)} x {self.feature_dim} rows, got {rows.shape}")
        if state in self.stats:
            raise ConsistencyError(f"state {state} already recorded")
        for c in class_ids:
            if c in self.rows:
                raise ConsistencyError(f"class {c} already has an initial classifier")
        for c, r in zip(class_ids, rows):
            self.rows[int(c)] = r.copy()
            self.state_of[int(c)] = int(state)
        self.stats[int(state)] = stats

    def row(self, c):
        try:
            return self.rows[c]
        except KeyError:
            raise ConsistencyError(f"no initial classifier stored for class {c}") from None

    def stats_for(self, state):
        try:
            return self.stats[state]
        except KeyError:
            raise ConsistencyError(f"no rank statistics stored for state {state}") from None

    def truncated(self, max_state):
        """Copy restricted to states ``<= max_state`` (the store as it stood then)."""
        out = InitClassifierStore(self.feature_dim)
        for c, s in self.state_of.items():
            if s <= max_state:
                out.rows[c] = self.rows[c]
                out.state_of[c] = s
        for s, st in self.stats.items():
            if s <= max_state:
                out.stats[s] = st
        return out

    def to_bytes(self) -> bytes:
        classes = sorted(self.rows)
        states = sorted(self.stats)
        meta = {
            "feature_dim": self.feature_dim,
            "stats_class_counts": [int(self.stats[s].class_count) for s in states],
        }
        arrays = {
            "classes": np.array(classes, dtype=np.int64),
            "initial_state": np.array([self.state_of[c] for c in classes], dtype=np.int64),
            "rows": np.array([self.rows[c] for c in classes], dtype=np.float64).reshape(len(classes), self.feature_dim),
            "stat_states": np.array(states, dtype=np.int64),
            "stat_mu": np.array([self.stats[s].mu for s in states], dtype=np.float64).reshape(len(states), self.feature_dim),
        }
        return snapshot.dumps("init_store", meta, arrays)

    @classmethod
    def from_bytes(cls, raw):
        _, meta, arrays = snapshot.loads(raw, expect_kind="init_store")
        store = cls(meta["feature_dim"])
        for c, s, r in zip(arrays["classes"], arrays["initial_state"], arrays["rows"]):
            store.rows[int(c)] = r.copy()
            store.state_of[int(c)] = int(s)
        for s, n, mu in zip(arrays["stat_states"], meta["stats_class_counts"], arrays["stat_mu"]):
            store.stats[int(s)] = RankStats(int(s), int(n), mu.copy())
        return store
