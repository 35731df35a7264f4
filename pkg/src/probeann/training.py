"""Ground truth, probe-boundary feature harvesting and training-set assembly."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import AttributedDataset, FilteredQuery, filtered_knn_arrays
from .errors import ContractViolation, InputMismatchError
from .features import FeatureSchema, extract_features
from .formats import read_ivecs, write_ivecs
from .gbdt import FLAG_DISCONNECTED, FLAG_EARLY, FLAG_PROBE_EXHAUSTED, TrainingSet
from .graph import ProximityGraph
from .search import Mode, SearchState


def queries_hash(queries: list[FilteredQuery]) -> str:
    h = hashlib.sha256()
    for q in queries:
        h.update(np.asarray(q.vector, dtype="<f4").tobytes())
        h.update(json.dumps(q.constraint.to_json(), sort_keys=True).encode())
        h.update(str(q.k).encode())
    return h.hexdigest()


def _pmap(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class GroundTruth:
    ids: list[np.ndarray]
    manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i) -> np.ndarray:
        return self.ids[i]

    def check(self, dataset: AttributedDataset, queries=None) -> None:
        if self.manifest.get("dataset_hash") != dataset.content_hash():
            raise InputMismatchError("ground truth was computed on a different dataset")
        if queries is not None and self.manifest.get("queries_hash") != queries_hash(queries):
            raise InputMismatchError("ground truth was computed for different queries")

    def save(self, prefix) -> None:
        write_ivecs(f"{prefix}.ivecs", self.ids)
        with open(f"{prefix}.manifest.json", "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, prefix, dataset: AttributedDataset | None = None, queries=None) -> "GroundTruth":
        with open(f"{prefix}.manifest.json") as fh:
            manifest = json.load(fh)
        gt = cls([np.asarray(r, dtype=np.int64) for r in read_ivecs(f"{prefix}.ivecs")], manifest)
        if len(gt) != manifest.get("n_queries"):
            raise InputMismatchError("ground truth row count disagrees with its manifest")
        if dataset is not None:
            gt.check(dataset, queries)
        return gt


def generate_ground_truth(dataset: AttributedDataset, queries: list[FilteredQuery],
                          threads: int = 1) -> GroundTruth:
    """Exact filtered top-k per query by full scan."""
    for q in queries:
        if q.constraint.attr_kind is not dataset.attr_kind:
            raise ContractViolation(f"{q.constraint.kind.value} filter on a {dataset.attr_kind.value} dataset")
    ids = _pmap(lambda q: filtered_knn_arrays(dataset, q)[0], queries, threads)
    ks = sorted({q.k for q in queries})
    manifest = {
        "dataset_hash": dataset.content_hash(),
        "queries_hash": queries_hash(queries),
        "n_queries": len(queries),
        "k": ks[0] if len(ks) == 1 else ks,
        "predicate_kinds": sorted({q.constraint.kind.value for q in queries}),
        "short": [i for i, (q, r) in enumerate(zip(queries, ids)) if len(r) < q.k],
    }
    return GroundTruth(ids, manifest)


@dataclass(frozen=True)
class HarvestRow:
    features: tuple[float, ...]
    target_ndc: int
    probe_ndc: int
    flags: int


def harvest_one(graph: ProximityGraph, dataset: AttributedDataset, query: FilteredQuery,
                truth, f: int, schema: FeatureSchema) -> HarvestRow:
    """Probe to ``f``, snapshot features, then continue the same traversal to full recall."""
    truth = np.asarray(truth, dtype=np.int64)
    state = SearchState(graph, dataset, query, schema.mode, truth=truth)
    state.advance(f)
    probe = state.cnt
    flags = 0
    if state.exhausted:
        flags |= FLAG_PROBE_EXHAUSTED
    feats = extract_features(state, schema)
    if len(truth) == 0:
        state.advance()
        return HarvestRow(feats.values, max(state.cnt, 1), probe, flags | FLAG_DISCONNECTED)
    if state.truth_cost is None:
        state.advance(stop_on_truth=True)
    if state.truth_cost is None:
        return HarvestRow(feats.values, max(state.cnt, 1), probe, flags | FLAG_DISCONNECTED)
    w = state.truth_cost
    if w <= probe:
        flags |= FLAG_EARLY
    return HarvestRow(feats.values, max(w, probe, 1), probe, flags)


def harvest(graph: ProximityGraph, dataset: AttributedDataset, queries: list[FilteredQuery],
            ground_truth, f: int = 500, mode: Mode | str = Mode.POST, *, mask: str | None = None,
            threads: int = 1) -> TrainingSet:
    """One ``(features at NDC=f, log W_q, flags)`` row per query, in query order."""
    if f < 1:
        raise ContractViolation("probe budget must be >= 1")
    if len(ground_truth) != len(queries):
        raise ContractViolation("need ground truth for every query")
    if isinstance(ground_truth, GroundTruth):
        ground_truth.check(dataset)
        ground_truth = ground_truth.ids
    schema = FeatureSchema(Mode(mode), mask)
    rows = _pmap(lambda j: harvest_one(graph, dataset, queries[j], ground_truth[j], f, schema),
                 range(len(queries)), threads)
    X = np.array([r.features for r in rows], dtype=np.float64).reshape(len(rows), len(schema.names))
    W = np.array([r.target_ndc for r in rows], dtype=np.float64)
    extra = {"probe_f": f, "graph_hash": graph.content_hash(), "dataset_hash": dataset.content_hash()}
    ts = TrainingSet(X, np.log(W), [r.flags for r in rows], schema.names, schema.schema_id, extra)
    ts.probe_ndc = np.array([r.probe_ndc for r in rows], dtype=np.int64)
    return ts


def mask_training_set(data: TrainingSet, mask: str | None) -> TrainingSet:
    """Zero a feature group, as masked extraction does at search time."""
    base = FeatureSchema.parse(data.schema_id)
    if base.mask is not None:
        raise ContractViolation(f"training set {data.schema_id!r} is already masked")
    schema = FeatureSchema(base.mode, mask)
    out = data.select(np.arange(len(data)))
    for name in schema.masked:
        if name in out.feature_names:
            out.rows[:, out.feature_names.index(name)] = 0.0
    out.schema_id = schema.schema_id
    return out
