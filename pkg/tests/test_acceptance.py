"""
Acceptance suite. Each test prints one ``criterion N: PASS|FAIL`` line; the
lines are repeated in the pytest terminal summary.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml

from oracles import herding_oracle
from scail import reporting
from scail.cli import main
from scail.config import MethodParams, parse_experiment
from scail.memory import herding_select, quotas
from scail.model import NetworkConfig, init_model, loss_and_grads
from scail.protocol import rectify_run, run_incremental
from scail.rectifiers import rank_means, scale_classifier

ROOT = Path(__file__).resolve().parents[1]
SEEDS = range(5)

EXPECTED_GIL = {
    "iCaRL": -16.75, "BiC": -4.03, "DeeSIL": -7.10, "FT": -6.40, "FT_NEM": -6.01, "FT_BAL": -5.98,
    "FT_L2": -5.17, "FT_init": -5.23, "FT_init_L2": -4.67, "ScaIL": -4.41, "ScaIL_herd": -3.71,
}


def desk_config(method, capacity, seed):
    """The shipped 20-class, 5-state desk stream."""
    spec = parse_experiment(yaml.safe_load((ROOT / "configs" / "desk.yaml").read_text()), seed_override=seed)
    base = next(r for r in spec.runs if r.method == method)
    return replace(base, memory_capacity=capacity)


# ---------------------------------------------------------------------------
# pure checks
# ---------------------------------------------------------------------------


def test_criterion_1_gil_fixture(criterion):
    t0 = time.perf_counter()
    table = reporting.fixture_gil(reporting.reference_fixture())
    elapsed = time.perf_counter() - t0
    assert len(table["configs"]) == 20
    diffs = {m: abs(table["gil"][m] - v) for m, v in EXPECTED_GIL.items()}
    worst = max(diffs, key=diffs.get)
    ok = all(d <= 0.05 for d in diffs.values()) and elapsed < 0.5
    criterion(1, ok, f"max |G_IL - expected| = {diffs[worst]:.4f} ({worst}), {elapsed * 1e3:.1f} ms")


def test_criterion_2_rank_scaling_properties(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    n = 1000
    failures = []
    for i in range(n):
        p, d = rng.integers(1, 33), rng.integers(1, 65)
        rows = rng.normal(scale=rng.uniform(0.01, 3), size=(p, d))
        st_i = rank_means(rows, 0)
        st_k = rank_means(rng.normal(size=(rng.integers(1, 33), d)), 1)
        if np.any(st_i.mu < 0) or np.any(np.diff(st_i.mu) > 0):
            failures.append((i, "monotonicity"))
        for w in rows:
            if not np.array_equal(scale_classifier(w, st_i, st_i).weights, w):
                failures.append((i, "identity"))
                break
            if not np.array_equal(np.sign(scale_classifier(w, st_i, st_k).weights), np.sign(w)):
                failures.append((i, "sign"))
                break
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 10
    criterion(2, ok, f"{n} populations, {len(failures)} failures, {elapsed:.2f} s")


def test_criterion_3_herding_oracle(criterion):
    rng = np.random.default_rng(33)
    t0 = time.perf_counter()
    n = 200
    mismatches = 0
    for _ in range(n):
        m, d = rng.integers(1, 13), rng.integers(1, 9)
        q = int(rng.integers(1, m + 1))
        x = rng.normal(size=(m, d))
        got = herding_select(x, q).tolist()
        if got != herding_oracle(x, q):
            mismatches += 1
            continue
        if any(herding_select(x, qq).tolist() != got[:qq] for qq in range(1, q)):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 10
    criterion(3, ok, f"{n} instances, {mismatches} mismatches, {elapsed:.2f} s")


def _rel_err(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale < 1e-10 else float(np.linalg.norm(a - b) / scale)


def test_criterion_4_gradient_check(criterion):
    rng = np.random.default_rng(44)
    eps = 1e-4
    t0 = time.perf_counter()
    worst = 0.0
    n_nets = 50
    for i in range(n_nets):
        depth = int(rng.integers(0, 3))
        hidden = tuple(int(h) for h in rng.integers(2, 6, size=depth))
        cfg = NetworkConfig(int(rng.integers(2, 5)), hidden, ("relu", "tanh")[i % 2], seed=i)
        n_cls = int(rng.integers(2, 6))
        model = init_model(cfg, n_cls)
        # zero init biases can park a relu unit exactly on its kink; random ones avoid that
        for b in model.biases:
            b[:] = rng.normal(scale=0.5, size=b.shape)
        x = rng.normal(size=(int(rng.integers(1, 5)), cfg.input_dim))
        y = rng.integers(0, n_cls, size=x.shape[0])
        n_old = int(rng.integers(1, n_cls + 1))
        teacher = rng.normal(size=(x.shape[0], n_old))
        for lam in (0.0, 1.0, float(rng.uniform(0.1, 0.9))):
            temp = float(rng.uniform(0.5, 4.0))
            _, grads = loss_and_grads(model, x, y, teacher, lam, temp)
            for pi, p in enumerate(model.params()):
                num = np.zeros_like(p)
                for idx in np.ndindex(p.shape):
                    mp, mm = model.copy(), model.copy()
                    mp.params()[pi][idx] += eps
                    mm.params()[pi][idx] -= eps
                    lp = loss_and_grads(mp, x, y, teacher, lam, temp)[0]
                    lm = loss_and_grads(mm, x, y, teacher, lam, temp)[0]
                    num[idx] = (lp - lm) / (2 * eps)
                worst = max(worst, _rel_err(grads[pi], num))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and elapsed < 30
    criterion(4, ok, f"{n_nets} networks x 3 loss mixes, worst relative error {worst:.2e}, {elapsed:.2f} s")


# ---------------------------------------------------------------------------
# runs on the desk stream
# ---------------------------------------------------------------------------


def test_criterion_5_memory_invariants(criterion):
    bad = []
    for b in (0, 10, 40):
        res = run_incremental(desk_config("FT", b, 0))
        for k, st in enumerate(res.states):
            n_k = res.prep.bounds[k]
            counts = [len(st.memory.entries[c]) for c in range(n_k)]
            if st.memory.total() > b or counts != quotas(b, n_k):
                bad.append((b, k))
            base, rem = divmod(b, n_k)
            if counts != [base + (c < rem) for c in range(n_k)]:
                bad.append((b, k, "floor+remainder"))
    criterion(5, not bad, f"B in (0, 10, 40), 5 states each, violations: {bad or 'none'}")


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    """FT at B=0 and B=2%, ScaIL by rectifying the B=2% FT run, FT and FT_distill at B=0.5%."""
    root = tmp_path_factory.mktemp("desk")
    out = {}
    t0 = time.perf_counter()
    for s in SEEDS:
        out[("FT", 0, s)] = run_incremental(desk_config("FT", 0, s)).report
        ft_dir = root / f"ft2_s{s}"
        out[("FT", "2%", s)] = run_incremental(desk_config("FT", "2%", s), ft_dir).report
        out[("ScaIL", "2%", s)] = rectify_run(ft_dir, "ScaIL", MethodParams(top_m=10))
    t_67 = time.perf_counter() - t0
    for s in SEEDS:
        out[("FT", "0.5%", s)] = run_incremental(desk_config("FT", "0.5%", s)).report
        out[("FT_distill", "0.5%", s)] = run_incremental(desk_config("FT_distill", "0.5%", s)).report
    return out, t_67


def test_criterion_6_catastrophic_forgetting(criterion, desk_runs):
    runs, elapsed = desk_runs
    no_mem = [runs[("FT", 0, s)]["summary"]["final_past_top1"] for s in SEEDS]
    mem = [runs[("FT", "2%", s)]["summary"]["final_past_top1"] for s in SEEDS]
    wins = sum(a < 0.05 and b > 0.30 for a, b in zip(no_mem, mem))
    ok = wins >= 4 and elapsed < 120
    detail = (f"{wins}/5 seeds; past top-1 B=0 {np.round(no_mem, 3).tolist()}, "
              f"B=2% {np.round(mem, 3).tolist()}")
    criterion(6, ok, detail)


def test_criterion_7_bias_and_ordering(criterion, desk_runs):
    runs, elapsed = desk_runs
    ft = [runs[("FT", "2%", s)]["summary"] for s in SEEDS]
    sc = [runs[("ScaIL", "2%", s)]["summary"] for s in SEEDS]
    gap_wins = sum(b["mean_abs_score_gap"] < a["mean_abs_score_gap"] for a, b in zip(ft, sc))
    acc_wins = sum(b["avg_incremental_top1"] >= a["avg_incremental_top1"] for a, b in zip(ft, sc))
    ok = gap_wins >= 4 and acc_wins >= 4 and elapsed < 300
    detail = (f"gap smaller {gap_wins}/5, accuracy >= {acc_wins}/5; "
              f"FT avg {np.round([a['avg_incremental_top1'] for a in ft], 3).tolist()}, "
              f"ScaIL avg {np.round([b['avg_incremental_top1'] for b in sc], 3).tolist()}")
    criterion(7, ok, detail)


def test_criterion_8_distillation_errors(criterion, desk_runs):
    runs, _ = desk_runs
    ft = [runs[("FT", "0.5%", s)] for s in SEEDS]
    kd = [runs[("FT_distill", "0.5%", s)] for s in SEEDS]
    wins = sum(b["summary"]["final_e_pp_ratio"] > a["summary"]["final_e_pp_ratio"] for a, b in zip(ft, kd))
    partition_ok = True
    for rep in runs.values():
        for st in rep["states"]:
            t = st["taxonomy"]
            partition_ok &= t["c_p"] + t["e_pp"] + t["e_pn"] == st["n_test_past"]
            partition_ok &= t["c_n"] + t["e_nn"] + t["e_np"] == st["n_test_new"]
            partition_ok &= st["n_test_past"] + st["n_test_new"] == st["n_test"]
            partition_ok &= sum(t["e_pp_by_state"].values()) == t["e_pp"]
    ok = wins >= 3 and partition_ok
    detail = (f"distill ratio higher {wins}/5; FT {np.round([a['summary']['final_e_pp_ratio'] for a in ft], 3).tolist()}, "
              f"distill {np.round([b['summary']['final_e_pp_ratio'] for b in kd], 3).tolist()}; "
              f"taxonomy partition {'exact' if partition_ok else 'BROKEN'}")
    criterion(8, ok, detail)


def test_criterion_9_determinism(criterion, tmp_path):
    spec = yaml.safe_load((ROOT / "configs" / "desk.yaml").read_text())
    spec.update(methods=["ScaIL", "FT_NEM"], seeds=[3], output=None)
    spec["memory"] = {"capacities": ["2%"], "selection": "herding"}
    cfg = tmp_path / "det.yaml"
    cfg.write_text(yaml.safe_dump(spec))
    digests = []
    for name in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
        files = sorted((tmp_path / name).rglob("report.json"))
        digests.append({str(p.relative_to(tmp_path / name)): p.read_bytes() for p in files})
    ok = digests[0] == digests[1] and len(digests[0]) == 4
    criterion(9, ok, f"{len(digests[0])} report.json files compared byte for byte across two executions")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
