"""
The incremental loop.

State 0 trains on all data of its classes. Each later state extends the
classifier, fine-tunes on new-class data plus the exemplar memory, stores
the freshly learned rows in the initial-classifier store, evaluates the
configured method on every test sample seen so far, and rebalances the
memory.

Inside a run, classes are identified by stream position (row index of the
classification layer); the report carries the mapping back to dataset ids.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import metrics, rectifiers
from .config import BAL_EPOCH_RATIO, FULL, RunConfig, resolve_capacity
from .errors import ConfigurationError, ConsistencyError, InputError, StateFailure
from .memory import ExemplarMemory, InitClassifierStore, herding_select, quotas, random_select, rebalance_memory
from .model import (
    NetworkConfig,
    TrainSchedule,
    extend_classifier,
    extract,
    init_model,
    load_model,
    save_model,
    train_state,
)

log = logging.getLogger(__name__)

REPORT_FORMAT = "scail.run-report"
REPORT_VERSION = 1


@dataclass
class PreparedData:
    """Train/test arrays with labels already mapped to stream positions."""

    stream: data_mod.StateStream
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    class_order: list  # position -> dataset class id
    bounds: list  # N_k after each state

    @property
    def num_states(self):
        return self.stream.num_states

    def state_of_position(self):
        out = {}
        lo = 0
        for k, hi in enumerate(self.bounds):
            for c in range(lo, hi):
                out[c] = k
            lo = hi
        return out

    def new_positions(self, k):
        lo = self.bounds[k - 1] if k else 0
        return list(range(lo, self.bounds[k]))


def load_datasets(cfg: RunConfig):
    d = cfg.data
    if d.kind == "synthetic":
        return data_mod.synth_gaussians(
            d.num_classes, d.dim, d.per_class_train, d.per_class_test, d.separation, d.seed + cfg.seed
        )
    train = data_mod.load_csv(d.train_path, has_header=d.has_header)
    test = data_mod.load_csv(d.test_path, has_header=d.has_header, label_map=train.label_map)
    if test.num_classes > train.num_classes:
        raise ConfigurationError("data.test_path: contains labels missing from the training file")
    return train, test


def prepare(cfg: RunConfig) -> PreparedData:
    train, test = load_datasets(cfg)
    st = cfg.stream
    stream = data_mod.split_stream(
        train, test, st.states, p0=st.initial_classes, order_seed=st.order_seed + cfg.seed, sizes=st.sizes
    )
    order = [c for s in stream.states for c in s.class_ids]
    pos = np.empty(len(order), dtype=np.int64)
    pos[np.asarray(order)] = np.arange(len(order))
    bounds = np.cumsum([len(s.class_ids) for s in stream.states]).astype(int).tolist()
    return PreparedData(stream, train.samples, pos[train.labels], test.samples, pos[test.labels], order, bounds)


def _schedule(cfg: RunConfig, k, phase="main"):
    s = cfg.schedule
    if phase == "balanced":
        epochs = max(1, int(round(s.epochs * BAL_EPOCH_RATIO)))
        base_lr = s.base_lr / 10.0
    else:
        epochs = s.initial_epochs if k == 0 else s.epochs
        base_lr = s.base_lr
    return TrainSchedule(
        epochs=epochs,
        base_lr=base_lr,
        state_index=k,
        plateau_patience=s.plateau_patience,
        plateau_factor=s.plateau_factor,
        batch_size=s.batch_size,
        momentum=s.momentum,
        weight_decay=s.weight_decay,
    )


def _select_new(model, prep, positions, quota, selection, rng):
    """Ordered exemplar candidates for each new class, long enough for ``quota[c]``."""
    out = {}
    for c in positions:
        idx = np.flatnonzero(prep.y_train == c)
        q = min(quota[c], len(idx))
        if q == 0:
            out[c] = ([], [])
            continue
        if selection == "herding":
            order = herding_select(extract(model, prep.x_train[idx]), q)
        else:
            order = random_select(len(idx), q, rng)
        out[c] = ([int(i) for i in idx[order]], list(range(q)))
    return out


@dataclass
class StateResult:
    model: object
    memory: ExemplarMemory
    eval: dict
    train_size: int


@dataclass
class RunResult:
    config: RunConfig
    prep: PreparedData
    capacity: int
    states: list = field(default_factory=list)
    store: InitClassifierStore | None = None
    report: dict | None = None


def _layer_for(method, model, store, n_past, params):
    if method in ("FT", "FT_BAL", "FT_distill", FULL, "FT_NEM"):
        return rectifiers.raw_layer(model, n_past, method)
    if method == "FT_L2":
        return rectifiers.build_l2_layer(model, n_past)
    if method == "FT_init":
        return rectifiers.build_init_layer(model, store, normalize=False)
    if method == "FT_init_L2":
        return rectifiers.build_init_layer(model, store, normalize=True)
    if method == "ScaIL":
        return rectifiers.build_scail_layer(model, store, top_m=params.top_m)
    raise ConfigurationError(f"method: unknown method {method!r}")


def method_scores(method, model, store, memory, prep, k, params, layer=None):
    """Prediction scores and raw (unmasked) scores of ``method`` on the cumulative test set of state ``k``.

    A prebuilt ``layer`` replaces the one ``method`` would construct.
    Returns ``(test_indices, features, scores, raw_scores)``.
    """
    n_k = prep.bounds[k]
    n_past = prep.bounds[k - 1] if k else 0
    test_idx = np.flatnonzero(prep.y_test < n_k)
    feats = extract(model, prep.x_test[test_idx])
    if layer is None and method == "FT_NEM":
        groups = []
        for c in range(n_k):
            if c < n_past:
                groups.append(prep.x_train[np.asarray(memory.entries.get(c, []), dtype=np.int64)])
            else:
                groups.append(prep.x_train[prep.y_train == c])
        protos = rectifiers.nem_prototypes(model, groups)
        s = rectifiers.nem_scores(protos, feats)
        return test_idx, feats, s, s
    if layer is None:
        layer = _layer_for(method, model, store, n_past, params)
    if layer.class_count != n_k or layer.n_past != n_past:
        raise ConsistencyError(f"layer shape ({layer.class_count} rows, {layer.n_past} past) does not fit state {k}")
    return test_idx, feats, layer.scores(feats), layer.raw_scores(feats)


def evaluate_state(method, model, store, memory, prep, k, params, layer=None):
    n_k = prep.bounds[k]
    n_past = prep.bounds[k - 1] if k else 0
    test_idx, feats, scores, raw = method_scores(method, model, store, memory, prep, k, params, layer)
    labels = prep.y_test[test_idx]
    past = range(n_past)
    preds = rectifiers.argmax_predictions(scores)
    top_k = min(5, n_k)
    is_past = labels < n_past
    tax = metrics.error_taxonomy(preds, labels, past, prep.state_of_position())
    mean_past, mean_new = metrics.score_bias(raw, labels, past)
    mp_model, mn_model = metrics.score_bias(feats @ model.classifier.T, labels, past)
    return {
        "state": int(k),
        "n_classes": int(n_k),
        "n_past_classes": int(n_past),
        "n_test": int(len(labels)),
        "n_test_past": int(is_past.sum()),
        "n_test_new": int((~is_past).sum()),
        "top1": metrics.topk_accuracy(scores, labels, 1),
        "top5": metrics.topk_accuracy(scores, labels, top_k),
        "top5_k": int(top_k),
        "past_top1": float((preds[is_past] == labels[is_past]).mean()) if is_past.any() else None,
        "new_top1": float((preds[~is_past] == labels[~is_past]).mean()) if (~is_past).any() else None,
        "mean_past_raw": mean_past,
        "mean_new_raw": mean_new,
        "model_mean_past_raw": mp_model,
        "model_mean_new_raw": mn_model,
        "taxonomy": tax.to_dict(),
    }


def summarize(states):
    top1 = [s["top1"] for s in states]
    top5 = [s["top5"] for s in states]
    a1, incremental = metrics.averaged_incremental_accuracy(top1)
    a5, _ = metrics.averaged_incremental_accuracy(top5)
    gaps = [
        abs(s["mean_past_raw"] - s["mean_new_raw"])
        for s in states[1:]
        if s["mean_past_raw"] is not None and s["mean_new_raw"] is not None
    ]
    final = states[-1]
    return {
        "incremental": incremental,
        "avg_incremental_top1": a1,
        "avg_incremental_top5": a5,
        "mean_abs_score_gap": float(np.mean(gaps)) if gaps else None,
        "final_top1": final["top1"],
        "final_top5": final["top5"],
        "final_past_top1": final["past_top1"],
        "final_new_top1": final["new_top1"],
        "final_e_pp_ratio": (final["taxonomy"]["e_pp"] / final["n_test_past"]) if final["n_test_past"] else None,
    }


def build_report(cfg, prep, capacity, state_evals, method=None, extra=None):
    report = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "method": method or cfg.method,
        "selection": cfg.selection,
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "memory_capacity": int(capacity),
        "class_order": [int(c) for c in prep.class_order],
        "states": state_evals,
        "summary": summarize(state_evals),
    }
    if extra:
        report.update(extra)
    return report


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def run_incremental(cfg: RunConfig, out_dir=None) -> RunResult:
    """Execute one configuration. With ``out_dir`` the run directory is written."""
    prep = prepare(cfg)
    n_train = len(prep.y_train)
    capacity = resolve_capacity(cfg.memory_capacity, n_train)
    method = cfg.method
    params = cfg.params
    netcfg = NetworkConfig(prep.x_train.shape[1], cfg.network.hidden_dims, cfg.network.activation, cfg.seed)
    rng = np.random.default_rng([int(cfg.seed) & 0xFFFFFFFFFFFFFFFF, 5])

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "config.json", {"config": cfg.to_dict(), "config_digest": cfg.digest()})
        write_json(out / "stream.manifest", prep.stream.manifest())

    result = RunResult(cfg, prep, capacity)
    store = InitClassifierStore(netcfg.feature_dim)
    memory = ExemplarMemory(capacity)
    model = None
    for k in range(prep.num_states):
        try:
            new = prep.new_positions(k)
            n_k = prep.bounds[k]
            new_idx = np.flatnonzero(np.isin(prep.y_train, new))
            if k == 0:
                model = init_model(netcfg, n_k)
                train_idx = new_idx
                teacher = None
            else:
                teacher = model if method == "FT_distill" else None
                model = extend_classifier(model, len(new))
                train_idx = np.concatenate([new_idx, memory.indices()])
            model = train_state(
                model,
                prep.x_train[train_idx],
                prep.y_train[train_idx],
                _schedule(cfg, k),
                teacher=teacher,
                lam=params.distill_lambda,
                temperature=params.distill_temperature,
            )
            quota = quotas(capacity, n_k)
            new_ex = _select_new(model, prep, new, quota, cfg.selection, rng)
            if method == "FT_BAL" and k > 0:
                bal = [memory.entries[c][: quota[c]] for c in range(n_k - len(new))]
                bal += [new_ex[c][0] for c in new]
                bal_idx = np.asarray([i for grp in bal for i in grp], dtype=np.int64)
                if len(bal_idx):
                    model = train_state(
                        model, prep.x_train[bal_idx], prep.y_train[bal_idx], _schedule(cfg, k, "balanced"), stream=1
                    )
            store.record(k, new, model.classifier[new], rectifiers.rank_means(model.classifier[new], state=k))
            memory = rebalance_memory(memory, new_ex, n_k)
            ev = evaluate_state(method, model, store, memory, prep, k, params)
            ev["train_size"] = int(len(train_idx))
            ev["memory_total"] = int(memory.total())
            ev["memory_counts"] = [int(len(memory.entries[c])) for c in range(n_k)]
        except (InputError, ConfigurationError, ArithmeticError, ValueError, RuntimeError) as exc:
            raise StateFailure(k, exc) from exc
        result.states.append(StateResult(model, memory, ev, int(len(train_idx))))
        log.info("%s state %d: top1=%.4f top5=%.4f", cfg.tag, k, ev["top1"], ev["top5"])
        if out is not None:
            sd = out / f"state_{k}"
            sd.mkdir(exist_ok=True)
            save_model(model, sd / "model.snap")
            write_json(sd / "memory.manifest", memory.to_manifest(k))
    result.store = store
    result.report = build_report(cfg, prep, capacity, [s.eval for s in result.states])
    if out is not None:
        (out / "init_store.snap").write_bytes(store.to_bytes())
        write_json(out / "report.json", result.report)
    return result


# ---------------------------------------------------------------------------
# offline re-application on persisted runs
# ---------------------------------------------------------------------------


def load_run(run_dir):
    """Reload config, models, memories and store of a finished run directory."""
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "config.json").read_text())
    cfg = RunConfig.from_dict(meta["config"])
    if not (run_dir / "init_store.snap").is_file():
        raise FileNotFoundError(f"{run_dir}: init_store.snap missing")
    store = InitClassifierStore.from_bytes((run_dir / "init_store.snap").read_bytes())
    prep = prepare(cfg)
    models, memories = [], []
    for k in range(prep.num_states):
        sd = run_dir / f"state_{k}"
        if not (sd / "model.snap").is_file():
            raise FileNotFoundError(f"{sd}: model.snap missing")
        models.append(load_model(sd / "model.snap"))
        memories.append(ExemplarMemory.from_manifest(json.loads((sd / "memory.manifest").read_text())))
    return cfg, prep, store, models, memories


def rectify_run(run_dir, method, params=None, write=True):
    """Evaluate ``method`` on the saved states of ``run_dir`` without retraining.

    Writes ``rectified/<tag>/state_k/layer.snap`` and ``report.json`` under
    the run directory when ``write`` is set; returns the report.
    """
    run_dir = Path(run_dir)
    try:
        cfg, prep, store, models, memories = load_run(run_dir)
    except FileNotFoundError as exc:
        raise ConsistencyError(str(exc)) from None
    params = params or cfg.params
    capacity = resolve_capacity(cfg.memory_capacity, len(prep.y_train))
    evals, layers = [], []
    for k, (model, memory) in enumerate(zip(models, memories)):
        st = store.truncated(k)
        ev = evaluate_state(method, model, st, memory, prep, k, params)
        ev["train_size"] = None
        ev["memory_total"] = int(memory.total())
        ev["memory_counts"] = [int(len(memory.entries.get(c, []))) for c in range(prep.bounds[k])]
        evals.append(ev)
        if method != "FT_NEM":
            layers.append(_layer_for(method, model, st, prep.bounds[k - 1] if k else 0, params))
    rcfg = replace(cfg, method=method, params=params)
    report = build_report(
        rcfg, prep, capacity, evals, extra={"rectified_from": cfg.digest(), "source_method": cfg.method}
    )
    if write:
        tag = method if method != "ScaIL" or params.top_m is None else f"{method}_top{params.top_m}"
        rd = run_dir / "rectified" / tag
        rd.mkdir(parents=True, exist_ok=True)
        for k, layer in enumerate(layers):
            (rd / f"state_{k}").mkdir(exist_ok=True)
            (rd / f"state_{k}" / "layer.snap").write_bytes(layer.to_bytes())
        write_json(rd / "report.json", report)
    return report


def evaluate_run(run_dir, layers_dir=None):
    """Re-evaluate a run from its snapshots.

    Without ``layers_dir`` the run's own method is applied; otherwise the
    ``state_k/layer.snap`` files found there are used as classification
    layers.
    """
    run_dir = Path(run_dir)
    try:
        cfg, prep, store, models, memories = load_run(run_dir)
    except FileNotFoundError as exc:
        raise ConsistencyError(str(exc)) from None
    capacity = resolve_capacity(cfg.memory_capacity, len(prep.y_train))
    evals = []
    method = cfg.method
    for k, (model, memory) in enumerate(zip(models, memories)):
        layer = None
        if layers_dir is not None:
            path = Path(layers_dir) / f"state_{k}" / "layer.snap"
            if not path.is_file():
                raise ConsistencyError(f"{path}: layer snapshot missing")
            layer = rectifiers.RectifiedLayer.from_bytes(path.read_bytes())
            method = layer.method
        ev = evaluate_state(method, model, store.truncated(k), memory, prep, k, cfg.params, layer)
        ev["train_size"] = None
        ev["memory_total"] = int(memory.total())
        ev["memory_counts"] = [int(len(memory.entries.get(c, []))) for c in range(prep.bounds[k])]
        evals.append(ev)
    return build_report(replace(cfg, method=method), prep, capacity, evals, extra={"rectified_from": cfg.digest(),
                                                                                   "source_method": cfg.method})
