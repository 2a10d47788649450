"""Datasets and their partition into an incremental class stream."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError, ParseError


@dataclass
class LabeledDataset:
    samples: np.ndarray
    labels: np.ndarray
    class_names: list | None = None
    # original label -> dense id, filled by load_csv
    label_map: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2 or self.samples.shape[0] != self.labels.shape[0]:
            raise InputError("samples must be n x d with n matching the label count")
        if len(self.labels) and self.labels.min() < 0:
            raise InputError("class ids must be non-negative")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, mask_or_index) -> "LabeledDataset":
        return LabeledDataset(self.samples[mask_or_index], self.labels[mask_or_index], self.class_names)

    def of_classes(self, class_ids) -> np.ndarray:
        """Indices of samples whose label is in ``class_ids`` (ascending)."""
        return np.flatnonzero(np.isin(self.labels, np.asarray(list(class_ids), dtype=np.int64)))


def synth_gaussians(num_classes, dim, per_class_train, per_class_test, separation, seed):
    """Isotropic unit-variance Gaussian classes around random directions.

    Class ``c`` is centered at ``separation * u_c`` with ``u_c`` a random unit
    vector. Returns ``(train, test)``; both are drawn from one stream, so
    they never share samples.
    """
    for name, v in (("num_classes", num_classes), ("dim", dim), ("per_class_train", per_class_train),
                    ("per_class_test", per_class_test)):
        if int(v) < 1:
            raise InputError(f"{name} must be positive")
    if separation < 0:
        raise InputError("separation must be non-negative")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 7])
    dirs = rng.normal(size=(num_classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = separation * dirs

    def draw(per_class):
        x = rng.normal(size=(num_classes * per_class, dim))
        y = np.repeat(np.arange(num_classes), per_class)
        return x + centers[y], y

    xtr, ytr = draw(per_class_train)
    xte, yte = draw(per_class_test)
    return LabeledDataset(xtr, ytr), LabeledDataset(xte, yte)


def load_csv(path, has_header=False, label_map=None) -> LabeledDataset:
    """Read rows of ``label,feat_1,...,feat_d``.

    Labels are re-indexed densely in order of first appearance, unless an
    existing ``label_map`` (e.g. from the matching training file) is given,
    in which case unseen labels are appended after it.
    """
    path = Path(path)
    mapping = dict(label_map or {})
    rows, labels = [], []
    dim = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ParseError("expected a label and at least one feature", lineno)
            if dim is None:
                dim = len(row) - 1
            elif len(row) - 1 != dim:
                raise ParseError(f"expected {dim} features, found {len(row) - 1}", lineno)
            raw_label = row[0].strip()
            try:
                feats = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric feature ({exc})", lineno) from None
            if not raw_label:
                raise ParseError("empty label", lineno)
            if raw_label not in mapping:
                mapping[raw_label] = len(mapping)
            labels.append(mapping[raw_label])
            rows.append(feats)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    ds = LabeledDataset(np.array(rows), np.array(labels), class_names=list(mapping))
    ds.label_map = mapping
    return ds


@dataclass(frozen=True)
class StateSpec:
    index: int
    class_ids: tuple  # new classes of this state, in stream order


@dataclass
class StateStream:
    states: list
    train: LabeledDataset
    test: LabeledDataset

    @property
    def num_states(self) -> int:
        return len(self.states)

    def new_classes(self, k):
        return list(self.states[k].class_ids)

    def seen_classes(self, k):
        out = []
        for s in self.states[: k + 1]:
            out.extend(s.class_ids)
        return out

    def class_state(self):
        """Map class id -> index of the state that introduces it."""
        return {c: s.index for s in self.states for c in s.class_ids}

    def train_indices(self, k) -> np.ndarray:
        return self.train.of_classes(self.states[k].class_ids)

    def test_indices(self, k) -> np.ndarray:
        return self.test.of_classes(self.states[k].class_ids)

    def cumulative_test_indices(self, k) -> np.ndarray:
        return self.test.of_classes(self.seen_classes(k))

    def manifest(self):
        return {
            "version": 1,
            "states": [{"state": s.index, "classes": [int(c) for c in s.class_ids]} for s in self.states],
        }


def _state_sizes(num_classes, z, p0, sizes):
    if sizes is not None:
        sizes = [int(s) for s in sizes]
        if len(sizes) != z:
            raise ConfigurationError(f"{len(sizes)} explicit state sizes given for Z={z}")
        if any(s < 1 for s in sizes) or sum(sizes) != num_classes:
            raise ConfigurationError(f"state sizes {sizes} must be positive and sum to {num_classes}")
        return sizes
    if z < 1:
        raise ConfigurationError("Z must be at least 1")
    if z == 1:
        if p0 is not None and p0 != num_classes:
            raise ConfigurationError(f"Z=1 requires P_0 = {num_classes}")
        return [num_classes]
    if p0 is None:
        if num_classes % z:
            raise ConfigurationError(f"{num_classes} classes cannot be split equally into {z} states")
        return [num_classes // z] * z
    rest = num_classes - p0
    if p0 < 1 or rest < z - 1 or rest % (z - 1):
        raise ConfigurationError(
            f"P_0={p0} leaves {rest} classes, not divisible into {z - 1} equal incremental states"
        )
    return [p0] + [rest // (z - 1)] * (z - 1)


def split_stream(train, test, z, p0=None, order_seed=0, sizes=None) -> StateStream:
    """Partition the classes of ``train`` into ``z`` disjoint states.

    The class order is a permutation drawn from ``order_seed``. With
    ``sizes=None`` the split is equal (optionally with a distinct ``p0``);
    otherwise ``sizes`` lists the per-state class counts explicitly.
    """
    num_classes = train.num_classes
    present = np.unique(train.labels)
    if len(present) != num_classes:
        raise ConfigurationError("every class id in [0, C) needs at least one training sample")
    if len(test) and test.num_classes > num_classes:
        raise ConfigurationError("test set contains classes absent from training")
    sizes = _state_sizes(num_classes, int(z), p0, sizes)
    rng = np.random.default_rng([int(order_seed) & 0xFFFFFFFFFFFFFFFF, 3])
    order = rng.permutation(num_classes)
    states, start = [], 0
    for k, size in enumerate(sizes):
        states.append(StateSpec(k, tuple(int(c) for c in order[start : start + size])))
        start += size
    return StateStream(states, train, test)


def write_manifest(stream: StateStream, path) -> None:
    Path(path).write_text(json.dumps(stream.manifest(), indent=2, sort_keys=True) + "\n")
