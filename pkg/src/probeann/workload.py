"""Synthetic attributed corpora and filtered query workloads.

Vectors come from a Gaussian mixture.  Attributes are either independent of
the mixture, aligned with it (each cluster draws from its own narrow band or
label pool), or anti-aligned (a cluster's items carry the band of a distant
partner cluster).  Range queries are sized from rank statistics so they hit a
target global selectivity; query rows are held out of the indexed corpus.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dataset import AttributedDataset, AttrKind, FilterConstraint, FilteredQuery
from .errors import ContractViolation, SelectivityError

ATTR_MAX = 10_000
DEFAULT_BUCKETS = (0.01, 0.05, 0.10, 0.20)


class Scheme(str, enum.Enum):
    INDEPENDENT_RANGE = "independent-range"
    CLUSTER_RANGE = "cluster-range"
    INDEPENDENT_LABELS = "independent-labels"
    CLUSTER_LABELS = "cluster-labels"
    ANTI_CORRELATED = "anti-correlated"

    @property
    def attr_kind(self) -> AttrKind:
        return AttrKind.LABELS if self.value.endswith("labels") else AttrKind.NUMERIC


class Mixture(NamedTuple):
    vectors: np.ndarray
    centers: np.ndarray
    assignment: np.ndarray


def gen_vectors(n: int, d: int, clusters: int, seed: int, sigma: float = 0.02) -> Mixture:
    if min(n, d, clusters) < 1:
        raise ContractViolation("n, d and clusters must be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.random((clusters, d))
    assignment = rng.integers(clusters, size=n)
    X = centers[assignment] + sigma * rng.standard_normal((n, d))
    return Mixture(X.astype(np.float32), centers, assignment)


def band(cluster: int, n_clusters: int) -> tuple[int, int]:
    """Closed integer interval of attribute values owned by ``cluster``."""
    lo = 1 + (cluster * ATTR_MAX) // n_clusters
    hi = ((cluster + 1) * ATTR_MAX) // n_clusters
    return lo, max(lo, hi)


def anti_partners(n_clusters: int, anti_fraction: float, rng) -> np.ndarray:
    """Cluster -> cluster whose band it borrows; identity for aligned clusters."""
    partner = np.arange(n_clusters)
    n_anti = int(round(anti_fraction * n_clusters))
    if n_anti == 0:
        return partner
    if n_anti < 2:
        raise ContractViolation("anti-correlation needs at least two anti clusters")
    anti = np.sort(rng.permutation(n_clusters)[:n_anti])
    partner[anti] = anti[(np.arange(n_anti) + n_anti // 2) % n_anti]
    return partner


@dataclass
class Corpus:
    """Generated rows before the query hold-out."""

    mixture: Mixture
    scheme: Scheme
    n_clusters: int
    values: np.ndarray | None = None
    labels: list | None = None
    partner: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.mixture.vectors)

    def dataset(self, ids=None) -> AttributedDataset:
        ids = np.arange(self.n) if ids is None else np.asarray(ids)
        X = self.mixture.vectors[ids]
        if self.values is not None:
            return AttributedDataset.from_values(X, self.values[ids])
        return AttributedDataset.from_labels(X, [self.labels[i] for i in ids])


def gen_attributes(mixture: Mixture, scheme: Scheme | str, seed: int, *, n_labels: int = 32,
                   pool_size: int = 4, max_labels: int = 3, anti_fraction: float = 1.0) -> Corpus:
    scheme = Scheme(scheme)
    rng = np.random.default_rng(seed)
    n = len(mixture.assignment)
    n_clusters = len(mixture.centers)
    a = mixture.assignment
    corpus = Corpus(mixture, scheme, n_clusters,
                    params={"n_labels": n_labels, "pool_size": pool_size, "max_labels": max_labels,
                            "anti_fraction": anti_fraction})
    if scheme is Scheme.INDEPENDENT_RANGE:
        corpus.values = rng.integers(1, ATTR_MAX + 1, size=n).astype(np.float64)
    elif scheme in (Scheme.CLUSTER_RANGE, Scheme.ANTI_CORRELATED):
        if scheme is Scheme.CLUSTER_RANGE:
            partner = np.arange(n_clusters)
        else:
            partner = anti_partners(n_clusters, anti_fraction, rng)
        bounds = np.array([band(c, n_clusters) for c in partner[a]])
        corpus.values = rng.integers(bounds[:, 0], bounds[:, 1] + 1).astype(np.float64)
        corpus.partner = partner
    elif scheme is Scheme.INDEPENDENT_LABELS:
        weights = 1.0 / np.arange(1, n_labels + 1)
        weights /= weights.sum()
        sizes = rng.integers(1, max_labels + 1, size=n)
        corpus.labels = [tuple(sorted(rng.choice(n_labels, size=s, replace=False, p=weights).tolist()))
                         for s in sizes]
    else:
        pools = np.stack([rng.choice(n_labels, size=pool_size, replace=False)
                          for _ in range(n_clusters)])
        sizes = rng.integers(1, max_labels + 1, size=n)
        labels = []
        for i in range(n):
            picked = set()
            while len(picked) < sizes[i]:
                if rng.random() < 0.9:
                    picked.add(int(pools[a[i], rng.integers(pool_size)]))
                else:
                    picked.add(int(rng.integers(n_labels)))
            labels.append(tuple(sorted(picked)))
        corpus.labels = labels
    return corpus


@dataclass(frozen=True)
class FilterSpec:
    kind: str = "range"  # range | contain | equal
    buckets: tuple[float, ...] = DEFAULT_BUCKETS
    center: str = "self"  # self | cluster | uniform (range only)
    k: int = 10
    tolerance: float = 0.005

    def __post_init__(self):
        if self.kind not in ("range", "contain", "equal"):
            raise ContractViolation(f"unknown filter kind {self.kind!r}")
        if self.center not in ("self", "cluster", "uniform"):
            raise ContractViolation(f"unknown centering {self.center!r}")
        if any(not 0 < b <= 1 for b in self.buckets):
            raise ContractViolation("selectivity buckets must lie in (0, 1]")


@dataclass
class Workload:
    base: AttributedDataset
    base_ids: np.ndarray
    train: list[FilteredQuery]
    eval: list[FilteredQuery]
    train_ids: np.ndarray
    eval_ids: np.ndarray
    train_buckets: list
    eval_buckets: list
    spec: FilterSpec
    seed: int

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "filter": {"kind": self.spec.kind, "buckets": list(self.spec.buckets),
                       "center": self.spec.center, "k": self.spec.k},
            "n_base": int(len(self.base_ids)),
            "train_ids": self.train_ids.tolist(),
            "eval_ids": self.eval_ids.tolist(),
            "train_buckets": self.train_buckets,
            "eval_buckets": self.eval_buckets,
            "base_hash": self.base.content_hash(),
        }


def range_for_selectivity(sorted_values: np.ndarray, anchor: float, target: float,
                          tolerance: float = 0.005) -> tuple[float, float]:
    """Closed window around ``anchor`` holding a ``target`` fraction of the values."""
    n = len(sorted_values)
    t = max(1, int(round(target * n)))
    p = int(np.searchsorted(sorted_values, anchor))
    start = min(max(p - t // 2, 0), n - t)
    lo, hi = float(sorted_values[start]), float(sorted_values[start + t - 1])
    got = np.searchsorted(sorted_values, hi, "right") - np.searchsorted(sorted_values, lo, "left")
    if abs(got / n - target) > tolerance:
        raise SelectivityError(
            f"selectivity bucket {target:g} unreachable: best window holds {got / n:.4f}")
    return lo, hi


def gen_queries(corpus: Corpus, n_train: int, n_eval: int, spec: FilterSpec, seed: int) -> Workload:
    if n_train < 0 or n_eval < 0 or n_train + n_eval >= corpus.n:
        raise ContractViolation("query count must leave a non-empty base corpus")
    if (spec.kind == "range") != (corpus.scheme.attr_kind is AttrKind.NUMERIC):
        raise ContractViolation(f"{spec.kind} filters on a {corpus.scheme.value} corpus")
    rng = np.random.default_rng(seed)
    held = rng.permutation(corpus.n)[: n_train + n_eval]
    train_ids, eval_ids = held[:n_train], held[n_train:]
    keep = np.ones(corpus.n, dtype=bool)
    keep[held] = False
    base_ids = np.flatnonzero(keep)
    base = corpus.dataset(base_ids)
    sorted_vals = np.sort(base.values) if base.attr_kind is AttrKind.NUMERIC else None

    def make(i: int) -> tuple[FilteredQuery, float | None]:
        x = corpus.mixture.vectors[i]
        if spec.kind == "range":
            bucket = float(spec.buckets[rng.integers(len(spec.buckets))])
            if spec.center == "self":
                anchor = corpus.values[i]
            elif spec.center == "cluster":
                lo, hi = band(int(corpus.mixture.assignment[i]), corpus.n_clusters)
                anchor = float(rng.integers(lo, hi + 1))
            else:
                anchor = float(rng.integers(1, ATTR_MAX + 1))
            lo, hi = range_for_selectivity(sorted_vals, anchor, bucket, spec.tolerance)
            return FilteredQuery(x, FilterConstraint.range(lo, hi), spec.k), bucket
        own = corpus.labels[i]
        if spec.kind == "equal":
            return FilteredQuery(x, FilterConstraint.equal(own), spec.k), None
        size = int(rng.integers(1, len(own) + 1))
        subset = rng.choice(np.asarray(own), size=size, replace=False).tolist()
        return FilteredQuery(x, FilterConstraint.contain(subset), spec.k), None

    train = [make(int(i)) for i in train_ids]
    evalq = [make(int(i)) for i in eval_ids]
    return Workload(base, base_ids, [q for q, _ in train], [q for q, _ in evalq],
                    train_ids, eval_ids, [b for _, b in train], [b for _, b in evalq], spec, seed)


def make_workload(n: int, d: int, clusters: int, scheme: Scheme | str, n_train: int, n_eval: int,
                  spec: FilterSpec, seed: int, *, sigma: float = 0.02, **attr_kw) -> Workload:
    """Vectors, attributes and held-out queries, all from one seed."""
    seeds = np.random.SeedSequence(seed).spawn(3)
    ints = [int(s.generate_state(1)[0]) for s in seeds]
    mixture = gen_vectors(n, d, clusters, ints[0], sigma)
    corpus = gen_attributes(mixture, scheme, ints[1], **attr_kw)
    return gen_queries(corpus, n_train, n_eval, spec, ints[2])
