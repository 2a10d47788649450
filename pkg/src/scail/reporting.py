"""Aggregation across runs: G_IL tables and the combined experiment report."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema

from . import metrics
from .config import RunConfig
from .errors import InputError

EXPERIMENT_FORMAT = "scail.experiment-report"
GIL_FORMAT = "scail.gil-table"


def load_schema(name):
    return json.loads(resources.files("scail").joinpath("schemas", f"{name}.schema.json").read_text())


def validate(doc):
    """Validate a report document against the schema matching its ``format`` field."""
    names = {
        "scail.run-report": "run_report",
        EXPERIMENT_FORMAT: "experiment_report",
        GIL_FORMAT: "gil_table",
    }
    try:
        name = names[doc["format"]]
    except KeyError:
        raise InputError(f"unknown report format {doc.get('format')!r}") from None
    jsonschema.validate(doc, load_schema(name))
    if name == "experiment_report" and doc["gil"] is not None:
        jsonschema.validate(doc["gil"], load_schema("gil_table"))


def reference_fixture():
    return json.loads(resources.files("scail").joinpath("fixtures", "reference_accuracies.json").read_text())


def gil_table(grid, full, acc_max=metrics.ACC_MAX):
    """G_IL per method from an accuracy grid.

    ``grid`` maps method -> {config key -> accuracy (percent)}; ``full``
    maps config key -> acc_Full. Every method must cover the same config
    keys.
    """
    if not grid:
        raise InputError("no methods to aggregate")
    methods = sorted(grid)
    keys = sorted(grid[methods[0]])
    for m in methods[1:]:
        if sorted(grid[m]) != keys:
            missing = sorted(set(keys) ^ set(grid[m]))
            raise InputError(f"config grid of {m!r} differs from {methods[0]!r} at {missing[:3]}")
    for key in keys:
        if key not in full:
            raise InputError(f"no Full accuracy for config {key}")
    rows = {}
    for m in methods:
        accs = [grid[m][key] for key in keys]
        rows[m] = metrics.gil(accs, [full[key] for key in keys], acc_max)
    return {
        "format": GIL_FORMAT,
        "version": 1,
        "acc_max": float(acc_max),
        "configs": keys,
        "full": {key: float(full[key]) for key in keys},
        "accuracy": {m: {key: float(grid[m][key]) for key in keys} for m in methods},
        "gil": rows,
    }


def fixture_gil(fixture=None):
    fx = fixture or reference_fixture()
    keys = [f"{c['dataset']}|Z{c['Z']}|B{c['B']}" for c in fx["configs"]]
    full = {key: fx["full"][c["dataset"]] for key, c in zip(keys, fx["configs"])}
    grid = {}
    for m, accs in fx["methods"].items():
        if len(accs) != len(keys):
            raise InputError(f"method {m!r}: {len(accs)} accuracies for {len(keys)} configurations")
        grid[m] = dict(zip(keys, accs))
    return gil_table(grid, full, fx.get("acc_max", metrics.ACC_MAX))


def method_label(report):
    m = report["method"]
    if report.get("selection") == "herding" and m != "Full":
        m += "_herd"
    return m


def config_key(report):
    c = report["config"]
    data_tag = RunConfig.from_dict(c).full_baseline().digest()[:10]
    return f"data={data_tag}|Z{c['stream']['states']}|B{c['memory_capacity']}|s{c['seed']}"


def _acc(report, metric):
    field = {"top1": "avg_incremental_top1", "top5": "avg_incremental_top5"}[metric]
    return 100.0 * report["summary"][field]


def _full_acc(report, metric):
    field = {"top1": "final_top1", "top5": "final_top5"}[metric]
    return 100.0 * report["summary"][field]


def reports_gil(reports, full_reports=(), full_value=None, metric="top5"):
    """G_IL from run reports.

    acc_Full comes either from a single ``full_value`` (percent) or from
    Full-run reports matched on data, network and seed.
    """
    full_by_digest = {r["config_digest"]: _full_acc(r, metric) for r in full_reports}
    grid, full = {}, {}
    for r in reports:
        if r["method"] == "Full":
            continue
        key = config_key(r)
        m = method_label(r)
        if key in grid.setdefault(m, {}):
            raise InputError(f"duplicate configuration {key} for method {m!r}")
        grid[m][key] = _acc(r, metric)
        if full_value is not None:
            full[key] = float(full_value)
        else:
            fd = RunConfig.from_dict(r["config"]).full_baseline().digest()
            if fd not in full_by_digest:
                raise InputError(f"no Full run for configuration {key}")
            full[key] = full_by_digest[fd]
    return gil_table(grid, full)


def run_entry(name, report):
    states = report["states"]
    return {
        "run": name,
        "method": method_label(report),
        "config_digest": report["config_digest"],
        "config_key": config_key(report) if report["method"] != "Full" else None,
        "summary": report["summary"],
        "top1_curve": [s["top1"] for s in states],
        "top5_curve": [s["top5"] for s in states],
        "bias_curve": [
            {"state": s["state"], "mean_past_raw": s["mean_past_raw"], "mean_new_raw": s["mean_new_raw"]}
            for s in states
        ],
        "taxonomy": [dict(s["taxonomy"], state=s["state"]) for s in states],
    }


def experiment_report(named_reports, metric="top5"):
    """Combine ``(run name, report)`` pairs into one document."""
    named_reports = sorted(named_reports, key=lambda nr: nr[0])
    runs = [run_entry(n, r) for n, r in named_reports]
    doc = {"format": EXPERIMENT_FORMAT, "version": 1, "metric": metric, "runs": runs, "gil": None, "gil_note": None}
    incremental = [r for _, r in named_reports if r["method"] != "Full"]
    fulls = [r for _, r in named_reports if r["method"] == "Full"]
    if not (incremental and fulls):
        doc["gil_note"] = "needs both incremental and Full runs"
        return doc
    try:
        doc["gil"] = reports_gil(incremental, fulls, metric=metric)
    except (InputError, ZeroDivisionError) as exc:
        # e.g. a saturated Full run (acc_Full = acc_Max) leaves G_IL undefined
        doc["gil_note"] = f"G_IL unavailable: {exc}"
    return doc


def format_gil(table):
    width = max(len(m) for m in table["gil"]) + 2
    lines = [f"{'method':<{width}}G_IL"]
    for m, v in sorted(table["gil"].items(), key=lambda kv: kv[0]):
        lines.append(f"{m:<{width}}{v:+.2f}")
    return "\n".join(lines)


def read_report(path):
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return json.loads(path.read_text())
