"""
Command-line entry point.

    scail run --config exp.yaml [--out DIR] [--jobs N] [--seed-override S]
    scail rectify RUN_DIR --method ScaIL [--top-m 10]
    scail eval RUN_DIR [--layers DIR] [--out FILE]
    scail gil [REPORT ...] [--fixture [PATH]] [--full PCT | --full-reports R ...] [--out FILE]
    scail report DIR_OR_RUN ... --out FILE

Progress goes to stderr; machine-readable output goes to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import reporting
from .config import METHODS, MethodParams, RunConfig, load_experiment
from .errors import ConfigurationError, ScailError
from .protocol import evaluate_run, rectify_run, run_incremental, write_json

log = logging.getLogger("scail")

OUT_ENV = "SCAIL_OUT"


def _completed(run_dir: Path, cfg: RunConfig) -> bool:
    try:
        meta = json.loads((run_dir / "config.json").read_text())
    except (OSError, ValueError):
        return False
    return meta.get("config_digest") == cfg.digest() and (run_dir / "report.json").is_file()


def _execute(args):
    cfg_dict, run_dir = args
    cfg = RunConfig.from_dict(cfg_dict)
    run_incremental(cfg, run_dir)
    return str(run_dir)


def cmd_run(ns) -> int:
    spec = load_experiment(ns.config, seed_override=ns.seed_override)
    out = Path(ns.out or spec.output or os.environ.get(OUT_ENV) or "runs")
    out.mkdir(parents=True, exist_ok=True)
    configs = list(spec.runs)
    if spec.full_baseline:
        configs += spec.full_runs()
    todo = []
    for cfg in configs:
        run_dir = out / cfg.dirname()
        if _completed(run_dir, cfg):
            log.info("skip %s (already complete)", run_dir.name)
            continue
        todo.append((cfg.to_dict(), run_dir))
    log.info("%d run(s), %d to execute", len(configs), len(todo))
    if ns.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=ns.jobs) as pool:
            for done in pool.map(_execute, todo):
                log.info("finished %s", Path(done).name)
    else:
        for item in todo:
            log.info("running %s", item[1].name)
            _execute(item)
    named = [(cfg.dirname(), reporting.read_report(out / cfg.dirname())) for cfg in configs]
    doc = reporting.experiment_report(named, metric=ns.metric)
    reporting.validate(doc)
    write_json(out / "report.json", doc)
    log.info("wrote %s", out / "report.json")
    return 0


def _params(ns, base: MethodParams) -> MethodParams:
    p = base
    if ns.top_m is not None:
        p = replace(p, top_m=None if ns.top_m.lower() == "none" else int(ns.top_m))
        if p.top_m is not None and p.top_m < 1:
            raise ConfigurationError("--top-m: must be >= 1 or 'none'")
    return p


def cmd_rectify(ns) -> int:
    run_dir = Path(ns.run_dir)
    meta = json.loads((run_dir / "config.json").read_text()) if (run_dir / "config.json").is_file() else None
    if meta is None:
        raise ConfigurationError(f"{run_dir}: not a run directory (config.json missing)")
    base = RunConfig.from_dict(meta["config"]).params
    report = rectify_run(run_dir, ns.method, _params(ns, base), write=True)
    reporting.validate(report)
    original = reporting.read_report(run_dir)
    for before, after in zip(original["states"], report["states"]):
        log.info(
            "state %d: top1 %.4f -> %.4f (%+.4f)",
            after["state"],
            before["top1"],
            after["top1"],
            after["top1"] - before["top1"],
        )
    return 0


def cmd_eval(ns) -> int:
    report = evaluate_run(ns.run_dir, ns.layers)
    reporting.validate(report)
    target = Path(ns.out) if ns.out else Path(ns.layers or ns.run_dir) / "eval.json"
    write_json(target, report)
    for s in report["states"]:
        log.info("state %d: top1=%.4f top5=%.4f", s["state"], s["top1"], s["top5"])
    log.info("wrote %s", target)
    return 0


def cmd_gil(ns) -> int:
    if ns.fixture is not None:
        if ns.reports:
            raise ConfigurationError("pass either report files or --fixture, not both")
        fx = reporting.reference_fixture() if ns.fixture == "" else json.loads(Path(ns.fixture).read_text())
        table = reporting.fixture_gil(fx)
    else:
        if not ns.reports:
            raise ConfigurationError("no reports given")
        if (ns.full is None) == (not ns.full_reports):
            raise ConfigurationError("give exactly one of --full or --full-reports")
        reports = [reporting.read_report(p) for p in ns.reports]
        fulls = [reporting.read_report(p) for p in ns.full_reports or ()]
        table = reporting.reports_gil(reports, fulls, full_value=ns.full, metric=ns.metric)
    reporting.validate(table)
    if ns.out:
        write_json(ns.out, table)
    print(reporting.format_gil(table))
    return 0


def _collect_runs(paths):
    found = []
    for p in map(Path, paths):
        if (p / "config.json").is_file() and (p / "report.json").is_file():
            found.append(p)
            continue
        subs = sorted(d for d in p.iterdir() if d.is_dir() and (d / "config.json").is_file())
        if not subs:
            raise ConfigurationError(f"{p}: no run directories found")
        found.extend(subs)
    return found


def cmd_report(ns) -> int:
    runs = _collect_runs(ns.paths)
    named = [(r.name, reporting.read_report(r)) for r in runs]
    doc = reporting.experiment_report(named, metric=ns.metric)
    reporting.validate(doc)
    write_json(ns.out, doc)
    log.info("%d run(s) aggregated into %s", len(named), ns.out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="scail", description="Class-incremental learning with classifier weight scaling.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute an experiment file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help=f"output root (default: config 'output', ${OUT_ENV}, or ./runs)")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--seed-override", type=int, default=None)
    r.add_argument("--metric", choices=("top1", "top5"), default="top5")
    r.set_defaults(func=cmd_run)

    rc = sub.add_parser("rectify", help="apply a classification-layer method to a saved run")
    rc.add_argument("run_dir")
    rc.add_argument("--method", required=True, choices=[m for m in METHODS if m not in ("FT_BAL", "FT_distill")])
    rc.add_argument("--top-m", default=None, help="ScaIL past-score mask size, or 'none'")
    rc.set_defaults(func=cmd_rectify)

    e = sub.add_parser("eval", help="re-evaluate a saved run or a directory of rectified layers")
    e.add_argument("run_dir")
    e.add_argument("--layers", default=None)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gil", help="aggregate G_IL over configurations")
    g.add_argument("reports", nargs="*")
    g.add_argument("--fixture", nargs="?", const="", default=None, help="accuracy fixture (default: the shipped reference accuracies)")
    g.add_argument("--full", type=float, default=None, help="acc_Full in percent, for all configurations")
    g.add_argument("--full-reports", nargs="+", default=None)
    g.add_argument("--metric", choices=("top1", "top5"), default="top5")
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gil)

    rp = sub.add_parser("report", help="combine run directories into one report")
    rp.add_argument("paths", nargs="+")
    rp.add_argument("--out", required=True)
    rp.add_argument("--metric", choices=("top1", "top5"), default="top5")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if ns.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return ns.func(ns)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ScailError, OSError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
