"""Recall, regression metrics, recall/NDC sweeps and the misalignment report."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .dataset import AttributedDataset, FilteredQuery, global_selectivity, local_correlation
from .errors import ContractViolation
from .graph import ProximityGraph
from .search import FixedBeam, FixedBudget, Mode, Predicted, filtered_search


def recall_at_k(result_ids, truth_ids, k: int) -> float:
    truth = list(truth_ids)[:k]
    if not truth:
        return 1.0
    return len(set(list(result_ids)[:k]) & set(truth)) / len(truth)


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.mean((a - b) ** 2))


def msle(pred_raw, target_raw) -> float:
    """Mean squared error of natural logs (no +1 shift)."""
    return mse(np.log(np.asarray(pred_raw, dtype=np.float64)),
               np.log(np.asarray(target_raw, dtype=np.float64)))


def pearson(a, b) -> float | None:
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / den if den > 0 else None


def spearman(a, b) -> float | None:
    return pearson(rankdata(a, method="average"), rankdata(b, method="average"))


def regression_report(predictions, targets) -> dict:
    """Metrics for log-space predictions against log-space targets."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1 or len(p) < 2:
        raise ContractViolation("need two equal-length 1-d arrays of at least 2 values")
    ss_res = float(np.sum((t - p) ** 2))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    report = {"n": len(p), "log_rmse": math.sqrt(ss_res / len(p)),
              "r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else None,
              "spearman": spearman(p, t)}
    report["flags"] = [] if ss_tot > 0 else ["zero_target_variance"]
    return report


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class CurveRow:
    knob: float
    recall: float
    mean_ndc: float
    mean_latency_ms: float
    latency_runs_ms: list = field(default_factory=list)
    ndc_runs: list = field(default_factory=list)


def make_policy(family: str, knob, model=None, probe_budget: int = 500, hard_cap: int | None = None):
    if family == "fixed-beam":
        return FixedBeam(int(knob))
    if family == "fixed-budget":
        return FixedBudget(float(knob))
    if family == "predicted":
        if model is None:
            raise ContractViolation("the predicted policy needs a model")
        return Predicted(model, probe_budget, float(knob), hard_cap)
    raise ContractViolation(f"unknown policy family {family!r}")


def sweep(graph: ProximityGraph, dataset: AttributedDataset, queries: list[FilteredQuery],
          ground_truth, family: str, knobs, *, model=None, probe_budget: int = 500,
          hard_cap: int | None = None, mode: Mode | str = Mode.POST, runs: int = 3) -> list[CurveRow]:
    """Mean recall@k, NDC and single-thread latency per knob value, sorted by knob.

    Filter masks are computed once up front; latency covers the search only.
    """
    if len(ground_truth) != len(queries):
        raise ContractViolation("need ground truth for every query")
    if runs < 1:
        raise ContractViolation("runs must be >= 1")
    masks = [dataset.valid_mask(q.constraint) for q in queries]
    rows = []
    for knob in sorted(knobs):
        policy = make_policy(family, knob, model, probe_budget, hard_cap)
        lat, ndcs, recall = [], [], None
        for _ in range(runs):
            t_total, ndc_total, rec = 0.0, 0, 0.0
            for q, gt, m in zip(queries, ground_truth, masks):
                t0 = time.perf_counter()
                out = filtered_search(graph, dataset, q, policy, mode, valid=m)
                t_total += time.perf_counter() - t0
                ndc_total += out.ndc_total
                rec += recall_at_k(out.ids, gt, q.k)
            lat.append(1e3 * t_total / len(queries))
            ndcs.append(ndc_total / len(queries))
            recall = rec / len(queries)
        if len(set(ndcs)) != 1:
            raise RuntimeError(f"non-deterministic NDC across runs at knob {knob}")
        rows.append(CurveRow(float(knob), recall, ndcs[0], float(np.mean(lat)), lat, ndcs))
    return rows


def frontier_cost(curve: list[CurveRow], target_recall: float) -> float:
    """Lowest mean NDC reaching ``target_recall`` on the curve, linearly interpolated.

    Interpolation runs along the Pareto envelope of the curve; ``inf`` when
    no row reaches the target.
    """
    pts = sorted((r.recall, r.mean_ndc) for r in curve)
    env = []
    for rec, ndc in reversed(pts):
        if not env or ndc < env[-1][1]:
            env.append((rec, ndc))
    env.reverse()  # ascending recall, ascending NDC
    for j, (rec, ndc) in enumerate(env):
        if rec >= target_recall:
            if j == 0:
                return ndc
            r0, n0 = env[j - 1]
            return n0 + (ndc - n0) * (target_recall - r0) / (rec - r0)
    return math.inf


def speedup_at_recall(candidate: list[CurveRow], baseline: list[CurveRow], min_recall: float = 0.9):
    """Best ``candidate NDC / baseline NDC`` over candidate rows with recall >= min_recall."""
    best = None
    for row in candidate:
        if row.recall < min_recall:
            continue
        base = frontier_cost(baseline, row.recall)
        if math.isinf(base):
            continue
        ratio = row.mean_ndc / base
        if best is None or ratio < best[0]:
            best = (ratio, row, base)
    return best


def misalignment_report(dataset: AttributedDataset, queries: list[FilteredQuery], m: int = 100) -> dict:
    rows = [(j, global_selectivity(dataset, q.constraint), local_correlation(dataset, q, m))
            for j, q in enumerate(queries)]
    sg = np.array([r[1] for r in rows])
    rl = np.array([r[2] for r in rows])
    return {"rows": rows, "m": m, "mean_sigma_global": float(sg.mean()) if len(rows) else None,
            "mean_rho_local": float(rl.mean()) if len(rows) else None,
            "spearman": spearman(sg, rl) if len(rows) >= 2 else None}


def _write_csv(path, header, rows, cfg_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_curve_csv(path, curve: list[CurveRow], cfg_hash: str) -> None:
    n_runs = max((len(r.latency_runs_ms) for r in curve), default=0)
    header = ["knob", "recall", "mean_ndc", "mean_latency_ms"] + [f"latency_run{i + 1}_ms" for i in range(n_runs)]
    _write_csv(path, header, [[repr(r.knob), repr(r.recall), repr(r.mean_ndc), f"{r.mean_latency_ms:.6f}",
                               *[f"{x:.6f}" for x in r.latency_runs_ms]] for r in curve], cfg_hash)


def write_misalignment_csv(path, report: dict, cfg_hash: str) -> None:
    _write_csv(path, ["query", "sigma_global", "rho_local"],
               [[j, repr(s), repr(r)] for j, s, r in report["rows"]], cfg_hash)
