"""A small tour of the library API on a 20k-point synthetic corpus.

1. generate a corpus whose attribute bands are anti-correlated with clusters;
2. show how far local filter density drifts from global selectivity;
3. probe one query and print the runtime features taken at the probe;
4. harvest a training set, fit the cost model and compare policies.

Run:  python demos/walkthrough.py
"""

import math

import numpy as np

from probeann import (FixedBeam, HyperParams, Predicted, build_graph, extract_features,
                      filtered_search, generate_ground_truth, harvest, train)
from probeann.evaluate import misalignment_report, recall_at_k, regression_report
from probeann.search import SearchState
from probeann.workload import FilterSpec, make_workload

wl = make_workload(26_000, 16, 20, "anti-correlated", 5000, 300, FilterSpec(center="cluster"), seed=1,
                   anti_fraction=0.5)
print(f"base {wl.base.n} x {wl.base.dim}, {len(wl.train)} train / {len(wl.eval)} eval queries")

rep = misalignment_report(wl.base, wl.eval, m=100)
print(f"mean global selectivity {rep['mean_sigma_global']:.3f}, "
      f"mean local ratio among the 100 nearest {rep['mean_rho_local']:.3f}")

g = build_graph(wl.base, M=12, ef_construction=100, seed=0)
q = wl.eval[0]
state = SearchState(g, wl.base, q)
state.advance(500)
feats = extract_features(state).as_dict()
print("features after a 500-distance probe:")
for name in ("d_start", "n_hops", "rho_pilot", "rho_queue", "d_queue_first", "d_nn_first", "r_nn_last"):
    print(f"  {name:14s} {feats[name]:.4f}")

gt_train = generate_ground_truth(wl.base, wl.train)
gt_eval = generate_ground_truth(wl.base, wl.eval)
train_set = harvest(g, wl.base, wl.train, gt_train, f=500)
eval_set = harvest(g, wl.base, wl.eval, gt_eval, f=500)
W = np.exp(train_set.targets)
print(f"full-recall cost W: median {np.median(W):.0f}, 95th pct {np.percentile(W, 95):.0f}, max {W.max():.0f}")

model = train(train_set, HyperParams(n_trees=100), seed=0)
r = regression_report(model.predict_batch(eval_set.rows), eval_set.targets)
print(f"holdout log-RMSE {r['log_rmse']:.3f}, R2 {r['r2']:.3f}, Spearman {r['spearman']:.3f}")


def summarize(policy):
    outs = [filtered_search(g, wl.base, q, policy) for q in wl.eval]
    rec = np.mean([recall_at_k(o.ids, t, q.k) for o, t, q in zip(outs, gt_eval.ids, wl.eval)])
    return rec, np.mean([o.ndc_total for o in outs])


for ef in (10, 40, 160):
    print("fixed beam ef=%-4d recall %.3f  mean NDC %.0f" % (ef, *summarize(FixedBeam(ef))))
for alpha in (1.0, 2.0, 4.0):
    print("predicted  a=%-4g recall %.3f  mean NDC %.0f" % (alpha, *summarize(Predicted(model, 500, alpha))))
print("top features by gain:",
      ", ".join(k for k, _ in sorted(model.feature_importance().items(), key=lambda kv: -kv[1])[:5]))
