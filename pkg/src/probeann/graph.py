"""Layered proximity graph (HNSW-style) and unfiltered traversal primitives."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import ContractViolation, ModelFormatError

MAGIC = b"PANNHNSW"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIIII")


@dataclass(eq=False)
class ProximityGraph:
    """Adjacency for every layer in CSR form.

    ``indptr[L, u]:indptr[L, u + 1]`` indexes into ``indices`` for the
    neighbours of node ``u`` on layer ``L``.  ``levels[u]`` is the highest
    layer holding ``u``; layer 0 holds every node.
    """

    indptr: np.ndarray
    indices: np.ndarray
    levels: np.ndarray
    entry_point: int
    dim: int
    M: int
    M0: int
    ef_construction: int

    @property
    def n(self) -> int:
        return len(self.levels)

    @property
    def n_layers(self) -> int:
        return self.indptr.shape[0]

    @property
    def top_layer(self) -> int:
        return self.n_layers - 1

    @property
    def level_norm(self) -> float:
        return 1.0 / math.log(self.M)

    def neighbors(self, u: int, layer: int = 0) -> np.ndarray:
        return self.indices[self.indptr[layer, u]:self.indptr[layer, u + 1]]

    def layer_members(self, layer: int) -> np.ndarray:
        return np.flatnonzero(self.levels >= layer)

    def degrees(self, layer: int = 0) -> np.ndarray:
        return np.diff(self.indptr[layer])

    def check_invariants(self) -> None:
        for layer in range(self.n_layers):
            deg = self.degrees(layer)
            cap = self.M0 if layer == 0 else self.M
            if deg.max(initial=0) > cap:
                raise ContractViolation(f"layer {layer} degree {deg.max()} exceeds {cap}")
            outside = self.levels < layer
            if np.any(deg[outside] > 0):
                raise ContractViolation(f"layer {layer} has edges from non-members")
            for u in np.flatnonzero(deg):
                if np.any(self.levels[self.neighbors(u, layer)] < layer):
                    raise ContractViolation(f"layer {layer} edge to non-member from {u}")
        if self.levels[self.entry_point] != self.top_layer:
            raise ContractViolation("entry point is not on the top layer")

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(MAGIC, VERSION, self.n, self.dim, self.M, self.M0,
                              self.ef_construction, self.n_layers)]
        for layer in range(self.n_layers):
            members = self.layer_members(layer)
            starts = self.indptr[layer, members]
            ends = self.indptr[layer, members + 1]
            offsets = np.zeros(len(members) + 1, dtype="<u4")
            offsets[1:] = np.cumsum(ends - starts)
            ids = (np.concatenate([self.indices[s:e] for s, e in zip(starts, ends)])
                   if len(members) else np.zeros(0))
            parts += [struct.pack("<I", len(members)), members.astype("<u4").tobytes(),
                      offsets.tobytes(), np.asarray(ids, dtype="<u4").tobytes()]
        parts.append(struct.pack("<I", self.entry_point))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProximityGraph":
        try:
            magic, version, n, dim, M, M0, efc, n_layers = _HEADER.unpack_from(data, 0)
        except struct.error as exc:
            raise ModelFormatError(f"truncated graph header: {exc}") from None
        if magic != MAGIC:
            raise ModelFormatError("not a graph file (bad magic)")
        if version != VERSION:
            raise ModelFormatError(f"unsupported graph version {version}")
        pos = _HEADER.size
        buf = np.frombuffer(data, dtype=np.uint8)

        def take(count):
            nonlocal pos
            end = pos + 4 * count
            if end > len(data):
                raise ModelFormatError("truncated graph body")
            out = buf[pos:end].view("<u4").astype(np.int64)
            pos = end
            return out

        levels = np.full(n, -1, dtype=np.int64)
        indptr = np.zeros((n_layers, n + 1), dtype=np.int64)
        chunks = []
        total = 0
        for layer in range(n_layers):
            (m,) = take(1)
            members = take(int(m))
            offsets = take(int(m) + 1)
            ids = take(int(offsets[-1]))
            levels[members] = layer
            deg = np.zeros(n, dtype=np.int64)
            deg[members] = np.diff(offsets)
            indptr[layer, 1:] = total + np.cumsum(deg)
            indptr[layer, 0] = total
            total += len(ids)
            chunks.append(ids)
        (entry,) = take(1)
        if pos != len(data):
            raise ModelFormatError("trailing bytes after graph body")
        if np.any(levels < 0):
            raise ModelFormatError("node missing from base layer")
        indices = np.concatenate(chunks).astype(np.int32) if chunks else np.zeros(0, np.int32)
        return cls(indptr, indices, levels, int(entry), dim, M, M0, efc)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ProximityGraph":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def sample_levels(n: int, M: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = 1.0 - rng.random(n)  # (0, 1]
    levels = np.floor(-np.log(u) / math.log(M)).astype(np.int64)
    return np.minimum(levels, 16)


def build_graph(vectors, M: int = 16, ef_construction: int = 200, seed: int = 0) -> ProximityGraph:
    """Insert every row in id order with the neighbour-selection heuristic.

    Layer 0 allows ``2 * M`` links per node, upper layers ``M``.  The result
    depends only on ``(vectors, M, ef_construction, seed)``.
    """
    X = np.ascontiguousarray(getattr(vectors, "vectors", vectors), dtype=np.float32)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractViolation("cannot build a graph over an empty dataset")
    if M < 2 or ef_construction < M:
        raise ContractViolation(f"need M >= 2 and ef_construction >= M, got {M}, {ef_construction}")
    M0 = 2 * M
    levels = sample_levels(X.shape[0], M, seed)
    nbr, cnt, entry, top = K.build_hnsw(X, levels, M, M0, ef_construction)
    n_layers = top + 1
    indptr = np.zeros((n_layers, X.shape[0] + 1), dtype=np.int64)
    chunks, total = [], 0
    for layer in range(n_layers):
        deg = cnt[layer].astype(np.int64)
        indptr[layer, 0] = total
        indptr[layer, 1:] = total + np.cumsum(deg)
        mask = np.arange(M0)[None, :] < deg[:, None]
        chunks.append(nbr[layer][mask])
        total += int(deg.sum())
    indices = np.concatenate(chunks).astype(np.int32)
    return ProximityGraph(indptr, indices, np.minimum(levels, top), int(entry),
                          X.shape[1], M, M0, ef_construction)


class NdcCounter:
    """Running count of distance computations made on behalf of one query."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


@dataclass(frozen=True)
class SearchBudget:
    max_ndc: int | float = math.inf
    beam_width: int = 64

    def __post_init__(self):
        if self.max_ndc < 1 or self.beam_width < 1:
            raise ContractViolation("budget and beam width must be positive")


def _as_query(graph: ProximityGraph, query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float32).astype(np.float64)
    if q.shape != (graph.dim,):
        raise ContractViolation(f"query has shape {q.shape}, graph d={graph.dim}")
    return q


def _budget_int(budget) -> int:
    return np.iinfo(np.int64).max if math.isinf(budget) else int(budget)


def greedy_route(graph: ProximityGraph, vectors, query, counter: NdcCounter | None = None):
    """Descend from the entry point to a local minimum on the base layer."""
    q = _as_query(graph, query)
    node, sq, ndc = K.greedy_route(vectors, q, graph.indptr, graph.indices,
                                   graph.entry_point, graph.top_layer)
    if counter is not None:
        counter.add(ndc)
    return int(node), math.sqrt(sq)


def beam_search_unfiltered(graph: ProximityGraph, vectors, query, k: int, budget: SearchBudget):
    """Beam search over the base layer seeded by :func:`greedy_route`.

    Returns ``(results, ndc)`` with ``results`` a list of ``(id, distance)``.
    """
    if k < 1:
        raise ContractViolation("k must be >= 1")
    X = np.ascontiguousarray(getattr(vectors, "vectors", vectors), dtype=np.float32)
    q = _as_query(graph, query)
    n = graph.n
    node, sq, ndc = K.greedy_route(X, q, graph.indptr, graph.indices, graph.entry_point, graph.top_layer)
    pool = max(budget.beam_width, k)
    st = np.zeros(K.N_SLOTS, dtype=np.int64)
    st[K.CNT] = ndc
    st[K.W_GT] = -1
    valid = np.ones(n, dtype=np.bool_)
    gt = np.zeros(n, dtype=np.uint8)
    visited = np.zeros(n, dtype=np.uint8)
    qd, qi = np.empty(n + 1), np.empty(n + 1, dtype=np.int64)
    rd, ri = np.empty(pool + 1), np.empty(pool + 1, dtype=np.int64)
    K.seed_post(node, sq, valid, gt, visited, qd, qi, rd, ri, st, pool)
    K.expand_post(X, q, graph.indptr, graph.indices, valid, gt, visited, qd, qi, rd, ri, st,
                  _budget_int(budget.max_ndc), pool, True, False)
    size = int(st[K.RSIZE])
    d, ids = -rd[:size], -ri[:size]
    order = np.lexsort((ids, d))[:k]
    return [(int(ids[j]), math.sqrt(d[j])) for j in order], int(st[K.CNT])
