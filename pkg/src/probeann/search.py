"""Filtered graph search with an early probe and adaptive termination.

Every search starts the same way: greedy routing down to the base layer,
then best-first expansion from the landing node.  Post-filtering admits all
neighbours to the candidate queue and filters only the result set;
pre-filtering queues valid nodes only and widens to 2-hop neighbourhoods
when a node's 1-hop list is mostly invalid.

Budgets are in distance computations (NDC).  Expansion works a whole node at
a time, so a search may finish a few NDC past its budget.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from . import _kernels as K
from .dataset import AttributedDataset, FilteredQuery
from .errors import ContractViolation
from .graph import ProximityGraph, _budget_int

TWO_HOP_BELOW = 0.25


class Mode(str, enum.Enum):
    POST = "post"
    PRE = "pre"


@dataclass(frozen=True)
class FixedBudget:
    max_ndc: float = math.inf


@dataclass(frozen=True)
class FixedBeam:
    """Classic efsearch-bounded filtered beam search (the naive baseline)."""

    efsearch: int
    max_ndc: float = math.inf

    def __post_init__(self):
        if self.efsearch < 1:
            raise ContractViolation("efsearch must be >= 1")


@dataclass(frozen=True)
class Predicted:
    """Probe for ``probe_budget`` NDC, then run to ``alpha * exp(model(features))``."""

    model: object
    probe_budget: int = 500
    alpha: float = 1.0
    hard_cap: int | None = None

    def __post_init__(self):
        if self.probe_budget < 1:
            raise ContractViolation("probe budget must be >= 1")
        if not self.alpha >= 0:
            raise ContractViolation("alpha must be non-negative")

    @property
    def cap(self) -> int:
        return self.hard_cap if self.hard_cap is not None else 64 * self.probe_budget


TerminationPolicy = Union[FixedBudget, FixedBeam, Predicted]


class SearchState:
    """Mutable traversal state for one query, resumable between phases."""

    def __init__(self, graph: ProximityGraph, dataset: AttributedDataset, query: FilteredQuery,
                 mode: Mode = Mode.POST, *, pool_cap: int | None = None, distance_stop: bool = False,
                 valid: np.ndarray | None = None, truth=None, two_hop_below: float = TWO_HOP_BELOW):
        if graph.n != dataset.n or graph.dim != dataset.dim:
            raise ContractViolation("graph was not built over this dataset")
        self.graph = graph
        self.X = dataset.vectors
        self.q = np.asarray(query.vector, dtype=np.float32).astype(np.float64)
        if self.q.shape != (dataset.dim,):
            raise ContractViolation(f"query has shape {self.q.shape}, dataset d={dataset.dim}")
        self.mode = Mode(mode)
        self.k = query.k
        self.valid = dataset.valid_mask(query.constraint) if valid is None else valid
        self.pool_cap = max(pool_cap or query.k, query.k)
        self.distance_stop = distance_stop
        self.two_hop_below = two_hop_below
        n = graph.n
        self.visited = np.zeros(n, dtype=np.uint8)
        self.gtmark = np.zeros(n, dtype=np.uint8)
        self.qd, self.qi = np.empty(n + 1), np.empty(n + 1, dtype=np.int64)
        self.rd, self.ri = np.empty(self.pool_cap + 1), np.empty(self.pool_cap + 1, dtype=np.int64)
        self.st = np.zeros(K.N_SLOTS, dtype=np.int64)
        self.st[K.W_GT] = -1
        if truth is not None:
            truth = np.asarray(truth, dtype=np.int64)
            self.gtmark[truth] = 1
            self.st[K.GT_LEFT] = len(truth)
        self.landing, sq, ndc = K.greedy_route(self.X, self.q, graph.indptr, graph.indices,
                                               graph.entry_point, graph.top_layer)
        self.landing = int(self.landing)
        self.d_start = math.sqrt(sq)
        self.st[K.CNT] = ndc
        self.ndc_routing = int(ndc)
        if self.mode is Mode.POST:
            K.seed_post(self.landing, sq, self.valid, self.gtmark, self.visited, self.qd, self.qi,
                        self.rd, self.ri, self.st, self.pool_cap)
        else:
            K.seed_pre(self.X, self.q, self.landing, sq, graph.indptr, graph.indices, self.valid,
                       self.gtmark, self.visited, self.qd, self.qi, self.rd, self.ri, self.st,
                       self.pool_cap, distance_stop, two_hop_below)

    def advance(self, budget=math.inf, stop_on_truth: bool = False) -> bool:
        """Expand until ``cnt >= budget``, the queue empties or the distance stop fires."""
        args = (self.X, self.q, self.graph.indptr, self.graph.indices, self.valid, self.gtmark,
                self.visited, self.qd, self.qi, self.rd, self.ri, self.st, _budget_int(budget),
                self.pool_cap, self.distance_stop, stop_on_truth)
        if self.mode is Mode.POST:
            return bool(K.expand_post(*args))
        return bool(K.expand_pre(*args, self.two_hop_below))

    @property
    def cnt(self) -> int:
        return int(self.st[K.CNT])

    @property
    def hops(self) -> int:
        return int(self.st[K.HOPS])

    @property
    def queue_size(self) -> int:
        return int(self.st[K.QSIZE])

    @property
    def exhausted(self) -> bool:
        return self.queue_size == 0

    @property
    def truth_cost(self) -> int | None:
        """``cnt`` when the last ground-truth id was visited, if it has been."""
        w = int(self.st[K.W_GT])
        return None if w < 0 else w

    @property
    def n_total_visited(self) -> int:
        return int(self.st[K.TOTAL])

    @property
    def n_valid_visited(self) -> int:
        return int(self.st[K.VALID])

    @property
    def n_total_one_hop(self) -> int:
        return int(self.st[K.TOTAL1])

    @property
    def n_valid_one_hop(self) -> int:
        return int(self.st[K.VALID1])

    def queue_snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        """``(ids, distances)`` of every queued node, ascending."""
        size = self.queue_size
        d, ids = self.qd[:size], self.qi[:size]
        order = np.lexsort((ids, d))
        return ids[order].copy(), np.sqrt(d[order])

    def result_snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        """``(ids, distances)`` of the result set, ascending."""
        size = int(self.st[K.RSIZE])
        d, ids = -self.rd[:size], -self.ri[:size]
        order = np.lexsort((ids, d))
        return ids[order], np.sqrt(d[order])

    def results(self) -> list[tuple[int, float]]:
        ids, dist = self.result_snapshot()
        return [(int(i), float(x)) for i, x in zip(ids[: self.k], dist[: self.k])]

    def visited_ids(self) -> np.ndarray:
        return np.flatnonzero(self.visited)


@dataclass
class SearchOutcome:
    results: list
    ndc_total: int
    ndc_probe: int = 0
    predicted_budget: int | None = None
    probe_features: object = None
    hops: int = 0

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.results]


def predicted_budget(prediction: float, alpha: float, lo: int, hi: int) -> int:
    raw = alpha * math.exp(min(prediction, 700.0))
    return max(lo, min(int(round(min(raw, float(hi)))), hi))


def filtered_search(graph: ProximityGraph, dataset: AttributedDataset, query: FilteredQuery,
                    policy: TerminationPolicy, mode: Mode = Mode.POST, *, valid=None,
                    two_hop_below: float = TWO_HOP_BELOW) -> SearchOutcome:
    from .features import FeatureSchema, extract_features

    mode = Mode(mode)
    if isinstance(policy, FixedBeam):
        state = SearchState(graph, dataset, query, mode, pool_cap=policy.efsearch,
                            distance_stop=True, valid=valid, two_hop_below=two_hop_below)
        state.advance(policy.max_ndc)
        return SearchOutcome(state.results(), state.cnt, hops=state.hops)
    if isinstance(policy, FixedBudget):
        state = SearchState(graph, dataset, query, mode, valid=valid, two_hop_below=two_hop_below)
        state.advance(policy.max_ndc)
        return SearchOutcome(state.results(), state.cnt, hops=state.hops)
    if isinstance(policy, Predicted):
        schema = FeatureSchema.for_model(policy.model, mode)
        state = SearchState(graph, dataset, query, mode, valid=valid, two_hop_below=two_hop_below)
        state.advance(policy.probe_budget)
        probe_ndc = state.cnt
        feats = extract_features(state, schema)
        w = predicted_budget(float(policy.model.predict(feats)), policy.alpha, probe_ndc, policy.cap)
        state.advance(w)
        return SearchOutcome(state.results(), state.cnt, probe_ndc, w, feats, state.hops)
    raise ContractViolation(f"unknown termination policy {policy!r}")


def post_filter_search(graph, dataset, query, policy, **kw) -> SearchOutcome:
    return filtered_search(graph, dataset, query, policy, Mode.POST, **kw)


def pre_filter_search(graph, dataset, query, policy, **kw) -> SearchOutcome:
    return filtered_search(graph, dataset, query, policy, Mode.PRE, **kw)


class FullRecallCost(NamedTuple):
    ndc: int
    flagged: bool  # queue exhausted before (or without) full recall


def run_to_full_recall(graph, dataset, query, ground_truth, mode: Mode = Mode.POST, *,
                       valid=None) -> FullRecallCost:
    """NDC spent when the last ground-truth id is first visited.

    With an empty ground truth, or a graph that runs out of reachable nodes
    first, the search runs to exhaustion and the cost is flagged.
    """
    truth = np.asarray(ground_truth, dtype=np.int64)
    state = SearchState(graph, dataset, query, mode, valid=valid, truth=truth)
    if len(truth) and state.truth_cost is not None:
        return FullRecallCost(state.truth_cost, False)
    if len(truth):
        state.advance(stop_on_truth=True)
        if state.truth_cost is not None:
            return FullRecallCost(state.truth_cost, False)
    else:
        state.advance()
    return FullRecallCost(state.cnt, True)
