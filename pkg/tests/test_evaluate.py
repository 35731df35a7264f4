import math

import numpy as np
import pytest

from probeann.dataset import global_selectivity
from probeann.errors import ContractViolation
from probeann.evaluate import (CurveRow, config_hash, frontier_cost, misalignment_report,
                               recall_at_k, regression_report, speedup_at_recall, spearman, sweep,
                               write_curve_csv)
from probeann.gbdt import BoostedTreesModel
from probeann.features import feature_names
from probeann.search import FixedBudget, post_filter_search
from probeann.training import generate_ground_truth
from probeann.workload import FilterSpec, make_workload

from _reference import ref_spearman


def numeric_queries(small_world, n=None):
    qs = [q for name, q in small_world["queries"] if name == "numeric"]
    return small_world["numeric"], qs[:n]


def test_recall_cases():
    assert recall_at_k([1, 2, 3], [3, 2, 1], 3) == 1.0
    assert recall_at_k([4, 5], [1, 2], 2) == 0.0
    assert recall_at_k([0, 1, 2, 3, 4, 90, 91, 92, 93, 94], list(range(7)), 10) == 5 / 7
    assert recall_at_k([], [], 10) == 1.0


def test_regression_report_against_definitions():
    rng = np.random.default_rng(0)
    t = rng.normal(5, 2, 100)
    p = t + rng.normal(0, 1, 100)
    p[:10] = np.round(p[:10])  # some ties
    t[10:20] = np.round(t[10:20])
    r = regression_report(p, t)
    mean_t = sum(t) / len(t)
    ss_res = sum((a - b) ** 2 for a, b in zip(t, p))
    ss_tot = sum((a - mean_t) ** 2 for a in t)
    assert abs(r["log_rmse"] - math.sqrt(ss_res / 100)) < 1e-9
    assert abs(r["r2"] - (1 - ss_res / ss_tot)) < 1e-9
    assert abs(r["spearman"] - ref_spearman(p.tolist(), t.tolist())) < 1e-9


def test_regression_report_edge_cases():
    t = np.arange(10.0)
    same = regression_report(t, t)
    assert same["log_rmse"] == 0 and same["r2"] == 1 and same["spearman"] == 1
    assert regression_report(t[::-1], t)["spearman"] == pytest.approx(-1.0)
    flat = regression_report(t, np.full(10, 3.0))
    assert flat["r2"] is None and "zero_target_variance" in flat["flags"]
    with pytest.raises(ContractViolation):
        regression_report([1.0], [1.0])


def test_sweep_fixed_beam_exhaustive_and_deterministic(small_world):
    g = small_world["graph"]
    ds, qs = numeric_queries(small_world, 30)
    gt = generate_ground_truth(ds, qs).ids
    rows = sweep(g, ds, qs, gt, "fixed-beam", [g.n, 10, 40], runs=3)
    assert [r.knob for r in rows] == [10, 40, g.n]
    assert rows[-1].recall == 1.0
    for r in rows:
        assert len(r.latency_runs_ms) == 3 and len(set(r.ndc_runs)) == 1
        assert r.mean_latency_ms == pytest.approx(np.mean(r.latency_runs_ms))


def test_sweep_alpha_zero_is_probe_only(small_world):
    g = small_world["graph"]
    ds, qs = numeric_queries(small_world, 30)
    gt = generate_ground_truth(ds, qs).ids
    model = BoostedTreesModel(math.log(5000), 0.1, 22, "post/v1", feature_names("post"))
    row = sweep(g, ds, qs, gt, "predicted", [0.0], model=model, probe_budget=120, runs=1)[0]
    probe = [post_filter_search(g, ds, q, FixedBudget(120)) for q in qs]
    assert row.mean_ndc == np.mean([o.ndc_total for o in probe])
    assert row.recall == pytest.approx(np.mean([recall_at_k(o.ids, t, 10) for o, t in zip(probe, gt)]))


def test_sweep_contracts(small_world):
    g = small_world["graph"]
    ds, qs = numeric_queries(small_world, 3)
    with pytest.raises(ContractViolation):
        sweep(g, ds, qs, [[]], "fixed-beam", [10])
    with pytest.raises(ContractViolation):
        sweep(g, ds, qs, [[]] * 3, "predicted", [1.0])
    with pytest.raises(ContractViolation):
        sweep(g, ds, qs, [[]] * 3, "bogus", [1.0])


def curve(points):
    return [CurveRow(k, r, n, 0.0) for k, (r, n) in enumerate(points)]


def test_frontier_and_speedup():
    base = curve([(0.8, 100), (0.9, 200), (1.0, 400), (0.95, 500)])  # last row dominated
    assert frontier_cost(base, 0.85) == pytest.approx(150)
    assert frontier_cost(base, 0.95) == pytest.approx(300)
    assert frontier_cost(base, 0.5) == 100 and math.isinf(frontier_cost(base, 1.01))
    cand = curve([(0.85, 10), (0.95, 150), (1.0, 600)])
    ratio, row, cost = speedup_at_recall(cand, base)
    assert ratio == pytest.approx(0.5) and row.recall == 0.95 and cost == pytest.approx(300)
    assert speedup_at_recall(curve([(0.5, 1)]), base) is None


def test_misalignment_independent_and_anti():
    ind = make_workload(20_000, 16, 20, "independent-range", 0, 300, FilterSpec(), seed=1)
    rep = misalignment_report(ind.base, ind.eval, 100)
    gaps = [r - s for _, s, r in rep["rows"]]
    assert abs(np.mean(gaps)) <= 0.02
    assert [s for _, s, _ in rep["rows"]] == [global_selectivity(ind.base, q.constraint) for q in ind.eval]
    anti = make_workload(20_000, 16, 20, "anti-correlated", 0, 300, FilterSpec(center="cluster"), seed=1)
    rep = misalignment_report(anti.base, anti.eval, 100)
    assert rep["mean_rho_local"] < 0.5 * rep["mean_sigma_global"]
    assert rep["spearman"] == spearman([r[1] for r in rep["rows"]], [r[2] for r in rep["rows"]])


def test_curve_csv_carries_config_hash(tmp_path):
    h = config_hash({"b": 1, "a": [1, 2]})
    assert h == config_hash({"a": [1, 2], "b": 1}) and h != config_hash({"a": [1, 2], "b": 2})
    rows = [CurveRow(10.0, 0.9, 123.5, 1.5, [1.0, 2.0], [123.5, 123.5])]
    write_curve_csv(tmp_path / "c.csv", rows, h)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == f"# config_hash={h}"
    assert lines[1] == "knob,recall,mean_ndc,mean_latency_ms,latency_run1_ms,latency_run2_ms"
    assert lines[2].startswith("10.0,0.9,123.5,1.500000")
