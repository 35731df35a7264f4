"""Gradient-boosted regression trees for squared error, written from scratch.

Trees are grown level by level with exact greedy splits over presorted
feature columns (or over quantile-bin codes when ``n_bins`` is set).  The
split gain is the reduction in squared error,
``S_L**2 / n_L + S_R**2 / n_R - S**2 / n``.  Tree structure is learned on a
row subsample; leaf values are the mean residual of *all* training rows that
reach the leaf, which keeps training loss monotone under subsampling.

Prediction is ``base_score + learning_rate * sum(leaf values)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .errors import ContractViolation, ModelFormatError, SchemaMismatchError

FORMAT_VERSION = 1

FLAG_EARLY = 1  # full recall reached inside the probe
FLAG_PROBE_EXHAUSTED = 2  # queue emptied before the probe budget was spent
FLAG_DISCONNECTED = 4  # queue emptied before full recall
FLAG_NAMES = {FLAG_EARLY: "early", FLAG_PROBE_EXHAUSTED: "probe_exhausted",
              FLAG_DISCONNECTED: "disconnected"}


@dataclass
class HyperParams:
    n_trees: int = 200
    max_depth: int = 8
    learning_rate: float = 0.1
    subsample: float = 0.8
    min_samples_leaf: int = 20
    n_bins: int | None = None  # None: exact splits

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ContractViolation(f"invalid hyperparameters {self}")
        if not 0 < self.subsample <= 1 or not self.learning_rate > 0:
            raise ContractViolation(f"invalid hyperparameters {self}")
        if self.n_bins is not None and not 2 <= self.n_bins <= 65536:
            raise ContractViolation("n_bins must be in [2, 65536]")


@dataclass
class TrainingSet:
    rows: np.ndarray
    targets: np.ndarray  # natural log of the NDC target
    flags: np.ndarray
    feature_names: list[str]
    schema_id: str
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float64).reshape(len(self.targets), -1)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.flags = np.asarray(self.flags, dtype=np.int64)
        if not (len(self.rows) == len(self.targets) == len(self.flags)):
            raise ContractViolation("rows, targets and flags must have equal length")
        if not np.all(np.isfinite(self.targets)):
            raise ContractViolation("targets must be finite (W_q >= 1)")
        if self.rows.shape[1] != len(self.feature_names):
            raise ContractViolation("feature name count does not match row width")

    def __len__(self) -> int:
        return len(self.targets)

    def select(self, idx) -> "TrainingSet":
        idx = np.asarray(idx)
        return TrainingSet(self.rows[idx], self.targets[idx], self.flags[idx],
                           list(self.feature_names), self.schema_id, dict(self.extra))

    def without_flags(self, flags: int) -> "TrainingSet":
        return self.select(np.flatnonzero((self.flags & flags) == 0))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema_id={self.schema_id}\n")
            for key, val in sorted(self.extra.items()):
                fh.write(f"# {key}={val}\n")
            w = csv.writer(fh)
            w.writerow([*self.feature_names, "target", "flags"])
            for row, t, f in zip(self.rows, self.targets, self.flags):
                w.writerow([repr(float(x)) for x in row] + [repr(float(t)), int(f)])

    @classmethod
    def read_csv(cls, path) -> "TrainingSet":
        meta = {}
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("# "):
                key, _, val = line[2:].partition("=")
                meta[key] = val
            elif line:
                body.append(line)
        if "schema_id" not in meta or not body:
            raise ModelFormatError(f"{path}: missing schema header")
        reader = csv.reader(body)
        header = next(reader)
        if header[-2:] != ["target", "flags"]:
            raise ModelFormatError(f"{path}: last columns must be target, flags")
        data = [r for r in reader]
        arr = np.array([[float(x) for x in r[:-1]] for r in data]).reshape(len(data), len(header) - 1)
        flags = np.array([int(r[-1]) for r in data], dtype=np.int64)
        schema_id = meta.pop("schema_id")
        return cls(arr[:, :-1], arr[:, -1], flags, header[:-2], schema_id, meta)


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _grow_tree(X, order, resid, in_sample, max_depth, min_leaf,
               feat, thr, left, right, value, gain, count, leaf_of):
    n, n_feat = X.shape
    cap = feat.shape[0]
    node_of = np.full(n, -1, dtype=np.int64)
    nsum = np.zeros(cap)
    ncnt = np.zeros(cap, dtype=np.int64)
    for i in range(n):
        if in_sample[i]:
            node_of[i] = 0
            nsum[0] += resid[i]
            ncnt[0] += 1
    best_gain = np.zeros(cap)
    best_feat = np.full(cap, -1, dtype=np.int64)
    best_thr = np.zeros(cap)
    lsum = np.zeros(cap)
    lcnt = np.zeros(cap, dtype=np.int64)
    last = np.zeros(cap)
    n_nodes = 1
    lo, hi = 0, 1
    for depth in range(max_depth):
        for nd in range(lo, hi):
            best_gain[nd] = 0.0
            best_feat[nd] = -1
        for f in range(n_feat):
            for nd in range(lo, hi):
                lsum[nd] = 0.0
                lcnt[nd] = 0
            for t in range(n):
                i = order[f, t]
                nd = node_of[i]
                if nd < lo:
                    continue
                v = X[i, f]
                c = lcnt[nd]
                rest = ncnt[nd] - c
                if c >= min_leaf and rest >= min_leaf and v > last[nd]:
                    sl = lsum[nd]
                    sr = nsum[nd] - sl
                    g = sl * sl / c + sr * sr / rest - nsum[nd] * nsum[nd] / ncnt[nd]
                    if g > best_gain[nd]:
                        best_gain[nd] = g
                        best_feat[nd] = f
                        mid = last[nd] + (v - last[nd]) * 0.5
                        best_thr[nd] = mid if mid > last[nd] else v
                lsum[nd] += resid[i]
                lcnt[nd] = c + 1
                last[nd] = v
        new_lo = n_nodes
        for nd in range(lo, hi):
            if best_feat[nd] >= 0:
                feat[nd] = best_feat[nd]
                thr[nd] = best_thr[nd]
                gain[nd] = best_gain[nd]
                left[nd] = n_nodes
                right[nd] = n_nodes + 1
                n_nodes += 2
        if n_nodes == new_lo:
            break
        for i in range(n):
            nd = node_of[i]
            if nd >= lo and feat[nd] >= 0:
                c = left[nd] if X[i, feat[nd]] < thr[nd] else right[nd]
                node_of[i] = c
                nsum[c] += resid[i]
                ncnt[c] += 1
        lo, hi = new_lo, n_nodes
    vsum = np.zeros(n_nodes)
    vcnt = np.zeros(n_nodes, dtype=np.int64)
    for i in range(n):
        nd = 0
        while feat[nd] >= 0:
            nd = left[nd] if X[i, feat[nd]] < thr[nd] else right[nd]
        leaf_of[i] = nd
        vsum[nd] += resid[i]
        vcnt[nd] += 1
    for nd in range(n_nodes):
        count[nd] = ncnt[nd]
        if feat[nd] < 0:
            value[nd] = vsum[nd] / vcnt[nd] if vcnt[nd] > 0 else 0.0
    return n_nodes


@njit(nogil=True, cache=True)
def _predict_row(x, feat, thr, left, right, value, roots, base, eta):
    s = 0.0
    for t in range(roots.shape[0]):
        nd = roots[t]
        while feat[nd] >= 0:
            nd = left[nd] if x[feat[nd]] < thr[nd] else right[nd]
        s += value[nd]
    return base + eta * s


@njit(nogil=True, cache=True)
def _predict_rows(X, feat, thr, left, right, value, roots, base, eta):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        out[r] = _predict_row(X[r], feat, thr, left, right, value, roots, base, eta)
    return out


# ---------------------------------------------------------------- model


class BoostedTreesModel:
    """Additive ensemble of regression trees stored as flat node arrays.

    Node ``j`` is a leaf iff ``feature[j] < 0``.  Child indices are global;
    ``roots[t]`` is the root of tree ``t``.
    """

    def __init__(self, base_score: float, learning_rate: float, n_features: int,
                 schema_id: str | None = None, feature_names=None, hyperparams: dict | None = None,
                 trees: list[dict] | None = None):
        self.base_score = float(base_score)
        self.learning_rate = float(learning_rate)
        self.n_features = int(n_features)
        self.schema_id = schema_id
        self.feature_names = list(feature_names) if feature_names is not None else [
            f"x{j}" for j in range(n_features)]
        self.hyperparams = dict(hyperparams or {})
        self.loss_history: list[float] = []
        self._set_trees(trees or [])

    def _set_trees(self, trees: list[dict]) -> None:
        cols = {k: [] for k in ("feature", "threshold", "left", "right", "value", "gain", "count")}
        roots = []
        for tree in trees:
            offset = len(cols["feature"])
            roots.append(offset)
            for k in cols:
                vals = np.asarray(tree[k])
                if k in ("left", "right"):
                    vals = np.where(vals >= 0, vals + offset, -1)
                cols[k].extend(vals.tolist())
        self.feature = np.asarray(cols["feature"], dtype=np.int64)
        self.threshold = np.asarray(cols["threshold"], dtype=np.float64)
        self.left = np.asarray(cols["left"], dtype=np.int64)
        self.right = np.asarray(cols["right"], dtype=np.int64)
        self.value = np.asarray(cols["value"], dtype=np.float64)
        self.gain = np.asarray(cols["gain"], dtype=np.float64)
        self.count = np.asarray(cols["count"], dtype=np.int64)
        self.roots = np.asarray(roots, dtype=np.int64)
        if np.any(self.feature >= self.n_features):
            raise ModelFormatError("split feature index out of range")
        if not np.all(np.isfinite(self.value)) or not np.all(np.isfinite(self.threshold)):
            raise ModelFormatError("non-finite node value")

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    def trees(self) -> list[dict]:
        out = []
        bounds = list(self.roots) + [len(self.feature)]
        for t in range(self.n_trees):
            lo, hi = bounds[t], bounds[t + 1]
            tree = {}
            for k in ("feature", "threshold", "left", "right", "value", "gain", "count"):
                vals = getattr(self, k)[lo:hi]
                if k in ("left", "right"):
                    vals = np.where(vals >= 0, vals - lo, -1)
                tree[k] = vals.tolist()
            out.append(tree)
        return out

    def _matrix(self, features) -> np.ndarray:
        sid = getattr(features, "schema_id", None)
        if sid is not None:
            if self.schema_id is not None and sid != self.schema_id:
                raise SchemaMismatchError(f"model schema {self.schema_id!r}, features {sid!r}")
            features = features.to_array()
        X = np.ascontiguousarray(features, dtype=np.float64)
        if X.shape[-1] != self.n_features:
            raise SchemaMismatchError(f"model takes {self.n_features} features, got {X.shape[-1]}")
        return X

    def predict(self, features) -> float:
        """Predicted log-cost for one feature row (array or ``RuntimeFeatures``)."""
        x = self._matrix(features)
        if x.ndim != 1:
            raise ContractViolation("predict takes one row; use predict_batch")
        return float(_predict_row(x, self.feature, self.threshold, self.left, self.right,
                                  self.value, self.roots, self.base_score, self.learning_rate))

    def predict_batch(self, X) -> np.ndarray:
        X = self._matrix(X)
        return _predict_rows(X.reshape(-1, self.n_features), self.feature, self.threshold,
                             self.left, self.right, self.value, self.roots, self.base_score,
                             self.learning_rate)

    def feature_importance(self) -> dict[str, float]:
        totals = np.zeros(self.n_features)
        splits = self.feature >= 0
        np.add.at(totals, self.feature[splits], self.gain[splits])
        return dict(zip(self.feature_names, totals.tolist()))

    def total_gain(self) -> float:
        return float(self.gain[self.feature >= 0].sum())

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "schema_id": self.schema_id,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "feature_names": self.feature_names,
            "hyperparams": self.hyperparams,
            "trees": [{"nodes": _tree_nodes(t)} for t in self.trees()],
        }

    @classmethod
    def from_json(cls, doc: dict, schema_id: str | None = None) -> "BoostedTreesModel":
        if not isinstance(doc, dict) or doc.get("version") != FORMAT_VERSION:
            version = doc.get("version") if isinstance(doc, dict) else None
            raise ModelFormatError(f"unsupported model version {version!r}")
        if schema_id is not None and doc.get("schema_id") != schema_id:
            raise SchemaMismatchError(f"model schema {doc.get('schema_id')!r}, expected {schema_id!r}")
        try:
            trees = [_tree_arrays(t["nodes"]) for t in doc["trees"]]
            return cls(doc["base_score"], doc["learning_rate"], doc["n_features"],
                       doc.get("schema_id"), doc.get("feature_names"), doc.get("hyperparams"), trees)
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(f"malformed model document: {exc!r}") from None

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path, schema_id: str | None = None) -> "BoostedTreesModel":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: {exc}") from None
        return cls.from_json(doc, schema_id)


def _tree_nodes(tree: dict) -> list[dict]:
    nodes = []
    for j in range(len(tree["feature"])):
        if tree["feature"][j] < 0:
            nodes.append({"value": tree["value"][j], "count": tree["count"][j]})
        else:
            nodes.append({"feature": tree["feature"][j], "threshold": tree["threshold"][j],
                          "left": tree["left"][j], "right": tree["right"][j],
                          "gain": tree["gain"][j], "count": tree["count"][j]})
    return nodes


def _tree_arrays(nodes: list[dict]) -> dict:
    n = len(nodes)
    out = {"feature": [-1] * n, "threshold": [0.0] * n, "left": [-1] * n, "right": [-1] * n,
           "value": [0.0] * n, "gain": [0.0] * n, "count": [0] * n}
    for j, node in enumerate(nodes):
        out["count"][j] = int(node.get("count", 0))
        if "feature" in node:
            for k in ("feature", "left", "right"):
                out[k][j] = int(node[k])
            if not (j < out["left"][j] < n and j < out["right"][j] < n):
                raise ModelFormatError(f"node {j} has out-of-range children")
            out["threshold"][j] = float(node["threshold"])
            out["gain"][j] = float(node.get("gain", 0.0))
        else:
            out["value"][j] = float(node["value"])
    return out


def quantile_codes(X: np.ndarray, n_bins: int):
    """Per-feature bin edges and the integer code of every value."""
    codes = np.empty_like(X)
    edges = []
    qs = np.arange(1, n_bins) / n_bins
    for f in range(X.shape[1]):
        e = np.unique(np.quantile(X[:, f], qs, method="lower"))
        e = e[e > X[:, f].min()]
        edges.append(e)
        codes[:, f] = np.searchsorted(e, X[:, f], side="right")
    return codes, edges


def train(data, params: HyperParams | None = None, seed: int = 0) -> BoostedTreesModel:
    """Fit a boosted ensemble to ``data`` (a :class:`TrainingSet` or ``(X, y)``)."""
    params = params or HyperParams()
    if isinstance(data, TrainingSet):
        X, y, names, schema_id = data.rows, data.targets, data.feature_names, data.schema_id
    else:
        X, y = data
        names, schema_id = None, None
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ContractViolation("need a 2-d feature matrix with one target per row")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise ContractViolation("features and targets must be finite")
    n, n_feat = X.shape
    base = float(np.mean(y))
    model = BoostedTreesModel(base, params.learning_rate, n_feat, schema_id, names, asdict(params))
    if n < 2 or np.all(y == y[0]):
        model.base_score = float(y[0])
        return model
    edges = None
    Xs = X
    if params.n_bins is not None:
        Xs, edges = quantile_codes(X, params.n_bins)
    order = np.ascontiguousarray(np.argsort(Xs, axis=0, kind="stable").T)
    rng = np.random.default_rng(seed)
    pred = np.full(n, base)
    cap = 2 ** (params.max_depth + 1)
    m = max(1, int(round(params.subsample * n)))
    trees = []
    history = []
    leaf_of = np.empty(n, dtype=np.int64)
    for _ in range(params.n_trees):
        in_sample = np.zeros(n, dtype=np.bool_)
        if m < n:
            in_sample[rng.permutation(n)[:m]] = True
        else:
            in_sample[:] = True
        resid = y - pred
        arrays = {"feature": np.full(cap, -1, dtype=np.int64), "threshold": np.zeros(cap),
                  "left": np.full(cap, -1, dtype=np.int64), "right": np.full(cap, -1, dtype=np.int64),
                  "value": np.zeros(cap), "gain": np.zeros(cap), "count": np.zeros(cap, dtype=np.int64)}
        used = _grow_tree(Xs, order, resid, in_sample, params.max_depth, params.min_samples_leaf,
                          arrays["feature"], arrays["threshold"], arrays["left"], arrays["right"],
                          arrays["value"], arrays["gain"], arrays["count"], leaf_of)
        tree = {k: v[:used].copy() for k, v in arrays.items()}
        if edges is not None:
            for j in np.flatnonzero(tree["feature"] >= 0):
                f = tree["feature"][j]
                tree["threshold"][j] = edges[f][int(math.floor(tree["threshold"][j]))]
        pred = pred + params.learning_rate * tree["value"][leaf_of]
        trees.append(tree)
        history.append(float(np.mean((y - pred) ** 2)))
    model._set_trees(trees)
    model.loss_history = history
    return model
