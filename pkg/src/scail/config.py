"""
Run and experiment configuration.

An experiment file (YAML or JSON) is expanded into one :class:`RunConfig`
per point of ``methods x capacities x states x seeds``. Every key is
checked; errors name the offending field path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .errors import ConfigurationError

METHODS = ("FT", "FT_NEM", "FT_BAL", "FT_L2", "FT_init", "FT_init_L2", "ScaIL", "FT_distill")
FULL = "Full"
# balanced phase length relative to the main incremental phase (15 vs 35 epochs)
BAL_EPOCH_RATIO = 15.0 / 35.0


def _fail(path, msg):
    raise ConfigurationError(f"{path}: {msg}")


def _take(d, path, allowed, required=()):
    if not isinstance(d, dict):
        _fail(path, f"expected a mapping, got {type(d).__name__}")
    for key in d:
        if key not in allowed:
            _fail(f"{path}.{key}", "unknown key")
    for key in required:
        if key not in d:
            _fail(f"{path}.{key}", "required key missing")
    return d


def _int(v, path, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        _fail(path, f"must be >= {lo}, got {v}")
    return v


def _float(v, path, lo=None, hi=None, lo_open=False, hi_open=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(path, f"expected a number, got {v!r}")
    v = float(v)
    if lo is not None and (v < lo or (lo_open and v == lo)):
        _fail(path, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        _fail(path, f"must be {'<' if hi_open else '<='} {hi}, got {v}")
    return v


@dataclass(frozen=True)
class DataSpec:
    kind: str = "synthetic"
    num_classes: int = 20
    dim: int = 16
    per_class_train: int = 100
    per_class_test: int = 50
    separation: float = 3.0
    seed: int = 0
    train_path: str | None = None
    test_path: str | None = None
    has_header: bool = False

    @classmethod
    def from_dict(cls, d, path="data"):
        _take(d, path, {f for f in cls.__dataclass_fields__}, required=("kind",))
        kind = d["kind"]
        if kind == "synthetic":
            for key in ("num_classes", "dim", "per_class_train", "per_class_test"):
                if key in d:
                    _int(d[key], f"{path}.{key}", lo=1)
            if "separation" in d:
                _float(d["separation"], f"{path}.separation", lo=0.0)
        elif kind == "csv":
            for key in ("train_path", "test_path"):
                if not isinstance(d.get(key), str):
                    _fail(f"{path}.{key}", "a file path is required for csv data")
        else:
            _fail(f"{path}.kind", f"must be 'synthetic' or 'csv', got {kind!r}")
        if "seed" in d:
            _int(d["seed"], f"{path}.seed")
        return cls(**d)


@dataclass(frozen=True)
class StreamSpec:
    states: int
    initial_classes: int | None = None
    sizes: tuple | None = None
    order_seed: int = 0

    @classmethod
    def from_dict(cls, d, path="stream"):
        _take(d, path, {"states", "initial_classes", "sizes", "order_seed"}, required=("states",))
        _int(d["states"], f"{path}.states", lo=1)
        if d.get("initial_classes") is not None:
            _int(d["initial_classes"], f"{path}.initial_classes", lo=1)
        sizes = d.get("sizes")
        if sizes is not None:
            sizes = tuple(_int(s, f"{path}.sizes[{i}]", lo=1) for i, s in enumerate(sizes))
        return cls(d["states"], d.get("initial_classes"), sizes, _int(d.get("order_seed", 0), f"{path}.order_seed"))


@dataclass(frozen=True)
class NetworkSpec:
    hidden_dims: tuple = (64,)
    activation: str = "relu"

    @classmethod
    def from_dict(cls, d, path="network"):
        _take(d, path, {"hidden_dims", "activation"})
        hidden = tuple(_int(h, f"{path}.hidden_dims[{i}]", lo=1) for i, h in enumerate(d.get("hidden_dims", (64,))))
        act = d.get("activation", "relu")
        if act not in ("relu", "tanh"):
            _fail(f"{path}.activation", f"must be relu or tanh, got {act!r}")
        return cls(hidden, act)


@dataclass(frozen=True)
class ScheduleSpec:
    epochs: int = 30
    initial_epochs: int = 60
    base_lr: float = 0.1
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 1e-4
    plateau_patience: int = 5
    plateau_factor: float = 0.1

    @classmethod
    def from_dict(cls, d, path="schedule"):
        _take(d, path, set(cls.__dataclass_fields__))
        out = {}
        for key in ("epochs", "initial_epochs", "batch_size", "plateau_patience"):
            if key in d:
                out[key] = _int(d[key], f"{path}.{key}", lo=1)
        if "base_lr" in d:
            out["base_lr"] = _float(d["base_lr"], f"{path}.base_lr", lo=0.0, lo_open=True)
        if "momentum" in d:
            out["momentum"] = _float(d["momentum"], f"{path}.momentum", lo=0.0, hi=1.0, hi_open=True)
        if "weight_decay" in d:
            out["weight_decay"] = _float(d["weight_decay"], f"{path}.weight_decay", lo=0.0)
        if "plateau_factor" in d:
            out["plateau_factor"] = _float(d["plateau_factor"], f"{path}.plateau_factor", 0.0, 1.0, True, True)
        return cls(**out)


@dataclass(frozen=True)
class MethodParams:
    top_m: int | None = 10
    distill_lambda: float = 0.5
    distill_temperature: float = 2.0

    @classmethod
    def from_dict(cls, d, path="method_params"):
        _take(d, path, set(cls.__dataclass_fields__))
        out = {}
        if "top_m" in d:
            out["top_m"] = None if d["top_m"] is None else _int(d["top_m"], f"{path}.top_m", lo=1)
        if "distill_lambda" in d:
            out["distill_lambda"] = _float(d["distill_lambda"], f"{path}.distill_lambda", 0.0, 1.0)
        if "distill_temperature" in d:
            out["distill_temperature"] = _float(d["distill_temperature"], f"{path}.distill_temperature", 0.0, lo_open=True)
        return cls(**out)


def _capacity(v, path):
    """Memory capacity: a non-negative integer or a percentage string like ``"2%"``."""
    if isinstance(v, str) and v.strip().endswith("%"):
        try:
            pct = float(v.strip()[:-1])
        except ValueError:
            _fail(path, f"bad percentage {v!r}")
        if pct < 0:
            _fail(path, "percentage must be non-negative")
        return v.strip()
    return _int(v, path, lo=0)


def resolve_capacity(capacity, n_train):
    if isinstance(capacity, str):
        return int(round(float(capacity[:-1]) / 100.0 * n_train))
    return int(capacity)


@dataclass(frozen=True)
class RunConfig:
    method: str
    data: DataSpec
    stream: StreamSpec
    network: NetworkSpec
    schedule: ScheduleSpec
    memory_capacity: object  # int or "p%"
    selection: str = "random"
    params: MethodParams = field(default_factory=MethodParams)
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS + (FULL,):
            raise ConfigurationError(f"method: unknown method {self.method!r}; expected one of {METHODS}")
        if self.selection not in ("random", "herding"):
            raise ConfigurationError(f"selection: must be random or herding, got {self.selection!r}")

    def to_dict(self):
        d = asdict(self)
        d["stream"]["sizes"] = list(self.stream.sizes) if self.stream.sizes is not None else None
        d["network"]["hidden_dims"] = list(self.network.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            method=d["method"],
            data=DataSpec.from_dict(d["data"]),
            stream=StreamSpec.from_dict(d["stream"]),
            network=NetworkSpec.from_dict(d["network"]),
            schedule=ScheduleSpec.from_dict(d["schedule"]),
            memory_capacity=_capacity(d["memory_capacity"], "memory_capacity"),
            selection=d.get("selection", "random"),
            params=MethodParams.from_dict(d.get("params", {})),
            seed=int(d.get("seed", 0)),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @property
    def tag(self) -> str:
        m = self.method + ("_herd" if self.selection == "herding" and self.method != FULL else "")
        cap = str(self.memory_capacity).replace("%", "pct")
        return f"{m}_B{cap}_Z{self.stream.states}_s{self.seed}"

    def dirname(self) -> str:
        return f"{self.tag}_{self.digest()[:10]}"

    def full_baseline(self) -> "RunConfig":
        """Joint training on all classes with all data, same data/network/seed."""
        return replace(
            self,
            method=FULL,
            stream=StreamSpec(1, None, None, self.stream.order_seed),
            memory_capacity=0,
            selection="random",
            params=MethodParams(),
        )


@dataclass
class ExperimentSpec:
    runs: list
    output: str | None
    full_baseline: bool

    def full_runs(self):
        seen, out = set(), []
        for rc in self.runs:
            full = rc.full_baseline()
            if full.digest() not in seen:
                seen.add(full.digest())
                out.append(full)
        return out


_TOP_KEYS = {
    "output",
    "full_baseline",
    "data",
    "stream",
    "network",
    "schedule",
    "memory",
    "methods",
    "method_params",
    "seeds",
}


def parse_experiment(d, seed_override=None) -> ExperimentSpec:
    _take(d, "<root>", _TOP_KEYS, required=("data", "stream", "network", "schedule", "memory", "methods", "seeds"))
    data = DataSpec.from_dict(d["data"])
    stream_d = _take(d["stream"], "stream", {"states", "initial_classes", "sizes", "order_seed"}, required=("states",))
    z_values = stream_d["states"]
    if not isinstance(z_values, list):
        z_values = [z_values]
    if not z_values:
        _fail("stream.states", "at least one value required")
    network = NetworkSpec.from_dict(d["network"])
    schedule = ScheduleSpec.from_dict(d["schedule"])
    mem = _take(d["memory"], "memory", {"capacities", "selection"}, required=("capacities", "selection"))
    caps = mem["capacities"] if isinstance(mem["capacities"], list) else [mem["capacities"]]
    if not caps:
        _fail("memory.capacities", "at least one value required")
    caps = [_capacity(c, f"memory.capacities[{i}]") for i, c in enumerate(caps)]
    selections = mem["selection"] if isinstance(mem["selection"], list) else [mem["selection"]]
    for i, s in enumerate(selections):
        if s not in ("random", "herding"):
            _fail(f"memory.selection[{i}]", f"must be random or herding, got {s!r}")
    methods = d["methods"]
    if not isinstance(methods, list) or not methods:
        _fail("methods", "expected a non-empty list")
    for i, m in enumerate(methods):
        if m not in METHODS:
            _fail(f"methods[{i}]", f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
    params = MethodParams.from_dict(d.get("method_params", {}))
    seeds = d["seeds"] if isinstance(d["seeds"], list) else [d["seeds"]]
    if not seeds:
        _fail("seeds", "at least one seed required")
    seeds = [_int(s, f"seeds[{i}]") for i, s in enumerate(seeds)]
    if seed_override is not None:
        seeds = [int(seed_override)]
    full = d.get("full_baseline", False)
    if not isinstance(full, bool):
        _fail("full_baseline", "expected true or false")

    runs = []
    for m in methods:
        for sel in selections:
            for cap in caps:
                for z in z_values:
                    stream = StreamSpec.from_dict({**stream_d, "states": z}, "stream")
                    for s in seeds:
                        runs.append(RunConfig(m, data, stream, network, schedule, cap, sel, params, s))
    for rc in runs:
        if rc.data.kind == "csv":
            for p in (rc.data.train_path, rc.data.test_path):
                if not Path(p).is_file():
                    _fail("data", f"file not found: {p}")
    return ExperimentSpec(runs, d.get("output"), full)


def load_experiment(path, seed_override=None) -> ExperimentSpec:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML/JSON ({exc})") from None
    if raw is None:
        raise ConfigurationError(f"{path}: empty configuration")
    data = raw.get("data") if isinstance(raw, dict) else None
    if isinstance(data, dict) and data.get("kind") == "csv":
        # relative data paths are taken from the config file's directory
        for key in ("train_path", "test_path"):
            if isinstance(data.get(key), str) and not Path(data[key]).is_absolute():
                data[key] = str((path.parent / data[key]).resolve())
    return parse_experiment(raw, seed_override=seed_override)
