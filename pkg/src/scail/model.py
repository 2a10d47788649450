"""
Feed-forward classifier with a bias-free linear classification layer.

The extractor is a stack of dense layers (weights ``in x out`` plus bias),
each followed by the configured activation. Its output width is the feature
dimension ``D``. The classifier holds one ``D``-dimensional row per class and
produces scores ``features @ classifier.T``.

Everything is float64. Training is plain mini-batch SGD with momentum and
weight decay, a fixed shuffling stream, and a plateau learning-rate decay.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import snapshot
from .errors import InputError, ShapeError

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh")

# Plateau detection counts an epoch as improving only past this margin.
PLATEAU_THRESHOLD = 1e-4


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    hidden_dims: tuple = ()
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if int(self.input_dim) < 1:
            raise InputError("input_dim must be positive")
        if any(h < 1 for h in self.hidden_dims):
            raise InputError("hidden widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def feature_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else int(self.input_dim)

    def to_dict(self):
        return {
            "input_dim": int(self.input_dim),
            "hidden_dims": list(self.hidden_dims),
            "feature_dim": self.feature_dim,
            "activation": self.activation,
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d):
        cfg = cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d.get("hidden_dims", ())),
            activation=d.get("activation", "relu"),
            seed=int(d.get("seed", 0)),
        )
        if "feature_dim" in d and d["feature_dim"] is not None and int(d["feature_dim"]) != cfg.feature_dim:
            raise InputError(
                f"feature_dim {d['feature_dim']} does not match the last hidden width {cfg.feature_dim}"
            )
        return cfg


@dataclass
class Model:
    config: NetworkConfig
    weights: list
    biases: list
    classifier: np.ndarray
    state_index: int = 0

    @property
    def class_count(self) -> int:
        return self.classifier.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    def params(self):
        """Parameter arrays in canonical order: W0, b0, W1, b1, ..., classifier."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        out.append(self.classifier)
        return out

    def param_names(self):
        names = []
        for i in range(len(self.weights)):
            names.extend((f"W{i}", f"b{i}"))
        names.append("classifier")
        return names

    def copy(self) -> "Model":
        return Model(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            classifier=self.classifier.copy(),
            state_index=self.state_index,
        )


def _classifier_rows(rng, count, dim):
    bound = 1.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=(count, dim))


def init_model(config: NetworkConfig, class_count: int) -> Model:
    """Kaiming-style fan-in init for the extractor, U(+-1/sqrt(D)) classifier rows."""
    rng = np.random.default_rng([int(config.seed) & 0xFFFFFFFFFFFFFFFF, 0])
    gain = 2.0 if config.activation == "relu" else 1.0
    weights, biases = [], []
    fan_in = int(config.input_dim)
    for width in config.hidden_dims:
        weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, width)))
        biases.append(np.zeros(width))
        fan_in = width
    model = Model(config, weights, biases, np.zeros((0, config.feature_dim)))
    if class_count:
        model = extend_classifier(model, class_count)
    return model


def extend_classifier(model: Model, new_class_count: int) -> Model:
    """Append ``new_class_count`` fresh rows; existing rows are left untouched.

    The new rows are drawn from a stream keyed on (seed, current row count),
    so the result depends only on the model's seed and shape.
    """
    if new_class_count < 1:
        raise InputError("new_class_count must be >= 1")
    n_before = model.class_count
    rng = np.random.default_rng([int(model.config.seed) & 0xFFFFFFFFFFFFFFFF, 1, n_before])
    rows = _classifier_rows(rng, new_class_count, model.feature_dim)
    out = model.copy()
    out.classifier = np.vstack([model.classifier, rows])
    return out


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(z, a, kind):
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _check_batch(model, batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.config.input_dim:
        raise ShapeError(f"batch must be n x {model.config.input_dim}, got shape {batch.shape}")
    return batch


def extract(model: Model, batch) -> np.ndarray:
    """Penultimate-layer features, shape ``n x D``."""
    h = _check_batch(model, batch)
    for w, b in zip(model.weights, model.biases):
        h = _act(h @ w + b, model.config.activation)
    return h


def forward(model: Model, batch):
    """Return ``(features, scores)`` for a batch."""
    feats = extract(model, batch)
    return feats, feats @ model.classifier.T


def _forward_cached(model, x):
    pre, post = [], [x]
    h = x
    for w, b in zip(model.weights, model.biases):
        z = h @ w + b
        h = _act(z, model.config.activation)
        pre.append(z)
        post.append(h)
    return pre, post, h @ model.classifier.T


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def _check_labels(labels, n, n_classes):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"labels must lie in [0, {n_classes})")
    return labels.astype(np.int64)


def cross_entropy_loss(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_labels(labels, scores.shape[0], scores.shape[1])
    lp = log_softmax(scores)
    return float(-lp[np.arange(len(labels)), labels].mean())


def cross_entropy_grad(scores, labels):
    """Loss and d(loss)/d(scores)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_labels(labels, scores.shape[0], scores.shape[1])
    n = scores.shape[0]
    lp = log_softmax(scores)
    loss = -lp[np.arange(n), labels].mean()
    g = np.exp(lp)
    g[np.arange(n), labels] -= 1.0
    return float(loss), g / n


def distillation_loss(current_scores, teacher_scores, temperature=2.0) -> float:
    """Cross-entropy of the softened teacher distribution against the softened current one."""
    return distillation_grad(current_scores, teacher_scores, temperature)[0]


def distillation_grad(current_scores, teacher_scores, temperature=2.0):
    current = np.asarray(current_scores, dtype=np.float64)
    teacher = np.asarray(teacher_scores, dtype=np.float64)
    if current.shape != teacher.shape or current.ndim != 2:
        raise ShapeError(f"score shapes differ: {current.shape} vs {teacher.shape}")
    if temperature <= 0:
        raise InputError("temperature must be positive")
    n = current.shape[0]
    target = softmax(teacher / temperature)
    lq = log_softmax(current / temperature)
    loss = -(target * lq).sum(axis=1).mean()
    g = (np.exp(lq) - target) / (temperature * n)
    return float(loss), g


def loss_and_grads(model: Model, x, y, teacher_scores=None, lam=0.0, temperature=2.0, weight_decay=0.0):
    """Total loss and gradients aligned with :meth:`Model.params`.

    With ``teacher_scores`` (``n x N_old``) the loss is
    ``(1 - lam) * CE + lam * distill`` on the first ``N_old`` outputs.
    """
    x = _check_batch(model, x)
    pre, post, scores = _forward_cached(model, x)
    ce, g_scores = cross_entropy_grad(scores, y)
    if teacher_scores is not None and lam != 0.0:
        n_old = teacher_scores.shape[1]
        kd, g_kd = distillation_grad(scores[:, :n_old], teacher_scores, temperature)
        loss = (1.0 - lam) * ce + lam * kd
        g_scores = (1.0 - lam) * g_scores
        g_scores[:, :n_old] += lam * g_kd
    else:
        loss = ce

    feats = post[-1]
    g_classifier = g_scores.T @ feats
    g_h = g_scores @ model.classifier
    g_w = [None] * len(model.weights)
    g_b = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        g_z = g_h * _act_grad(pre[i], post[i + 1], model.config.activation)
        g_w[i] = post[i].T @ g_z
        g_b[i] = g_z.sum(axis=0)
        if i:
            g_h = g_z @ model.weights[i].T

    grads = []
    for gw, gb in zip(g_w, g_b):
        grads.extend((gw, gb))
    grads.append(g_classifier)
    if weight_decay:
        params = model.params()
        loss += 0.5 * weight_decay * sum(float((p * p).sum()) for p in params)
        grads = [g + weight_decay * p for g, p in zip(grads, params)]
    return float(loss), grads


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int
    base_lr: float = 0.1
    state_index: int = 0
    plateau_patience: int = 5
    plateau_factor: float = 0.1
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.epochs < 1:
            raise InputError("epochs must be positive")
        if self.base_lr <= 0:
            raise InputError("base_lr must be positive")
        if self.state_index < 0:
            raise InputError("state_index must be non-negative")
        if self.plateau_patience < 1:
            raise InputError("plateau_patience must be positive")
        if not 0.0 < self.plateau_factor < 1.0:
            raise InputError("plateau_factor must lie in (0, 1)")
        if self.batch_size < 1:
            raise InputError("batch_size must be positive")

    @property
    def initial_lr(self) -> float:
        return self.base_lr / (self.state_index + 1)

    def to_dict(self):
        return {
            "epochs": int(self.epochs),
            "base_lr": float(self.base_lr),
            "state_index": int(self.state_index),
            "plateau_patience": int(self.plateau_patience),
            "plateau_factor": float(self.plateau_factor),
            "batch_size": int(self.batch_size),
            "momentum": float(self.momentum),
            "weight_decay": float(self.weight_decay),
        }


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    epoch_lr: list = field(default_factory=list)


def train_state(
    model: Model,
    x,
    y,
    schedule: TrainSchedule,
    teacher: Model | None = None,
    lam: float = 0.5,
    temperature: float = 2.0,
    stream: int = 0,
    log_out: TrainLog | None = None,
) -> Model:
    """Fine-tune ``model`` on ``(x, y)`` and return the updated copy.

    The learning rate starts at ``schedule.initial_lr`` and is multiplied by
    ``plateau_factor`` once the epoch training loss has not improved by more
    than ``PLATEAU_THRESHOLD`` for ``plateau_patience`` epochs. ``stream``
    separates shuffling streams of several phases within one state.
    """
    x = _check_batch(model, x)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise InputError("empty training set")
    if len(y) != x.shape[0]:
        raise ShapeError("samples and labels differ in length")
    if y.min() < 0 or y.max() >= model.class_count:
        raise InputError(f"labels must lie in [0, {model.class_count})")
    if not 0.0 <= lam <= 1.0:
        raise InputError("lambda must lie in [0, 1]")

    teacher_scores = None
    if teacher is not None and lam > 0.0:
        if teacher.class_count > model.class_count:
            raise ShapeError("teacher covers more classes than the student")
        teacher_scores = forward(teacher, x)[1]

    m = model.copy()
    m.state_index = schedule.state_index
    params = m.params()
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng([int(m.config.seed) & 0xFFFFFFFFFFFFFFFF, 2, schedule.state_index, stream])
    lr = schedule.initial_lr
    best = np.inf
    stale = 0
    n = len(y)
    bs = schedule.batch_size
    for epoch in range(schedule.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            ts = teacher_scores[idx] if teacher_scores is not None else None
            loss, grads = loss_and_grads(m, x[idx], y[idx], ts, lam, temperature, schedule.weight_decay)
            total += loss * len(idx)
            for p, v, g in zip(params, velocity, grads):
                v *= schedule.momentum
                v -= lr * g
                p += v
        epoch_loss = total / n
        if log_out is not None:
            log_out.epoch_loss.append(epoch_loss)
            log_out.epoch_lr.append(lr)
        if epoch_loss < best - PLATEAU_THRESHOLD:
            best = epoch_loss
            stale = 0
        else:
            stale += 1
            if stale >= schedule.plateau_patience:
                lr *= schedule.plateau_factor
                stale = 0
                log.debug("state %d epoch %d: lr -> %.3g", schedule.state_index, epoch, lr)
    return m


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def model_to_bytes(model: Model) -> bytes:
    meta = {
        "network": model.config.to_dict(),
        "state_index": int(model.state_index),
        "class_count": int(model.class_count),
    }
    arrays = dict(zip(model.param_names(), model.params()))
    return snapshot.dumps("model", meta, arrays)


def model_from_bytes(raw: bytes) -> Model:
    _, meta, arrays = snapshot.loads(raw, expect_kind="model")
    config = NetworkConfig.from_dict(meta["network"])
    n_layers = len(config.hidden_dims)
    model = Model(
        config=config,
        weights=[arrays[f"W{i}"] for i in range(n_layers)],
        biases=[arrays[f"b{i}"] for i in range(n_layers)],
        classifier=arrays["classifier"].reshape(-1, config.feature_dim),
        state_index=int(meta["state_index"]),
    )
    if model.class_count != meta["class_count"]:
        raise ShapeError("classifier row count disagrees with header")
    return model


def save_model(model: Model, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())


def with_classifier(model: Model, rows) -> Model:
    """Shallow copy of ``model`` carrying a different classification layer."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != model.feature_dim:
        raise ShapeError(f"classifier rows must be N x {model.feature_dim}")
    return replace(model, classifier=rows)
