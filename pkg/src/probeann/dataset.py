"""Attributed vector data, filter predicates, selectivity and the exact oracle.

A dataset is an ``(N, d)`` float32 matrix plus one attribute per row.  All
rows share one attribute kind: either a set of integer labels or a single
numeric value.  Distances are Euclidean; ordering is always lexicographic on
``(distance, item id)``.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation, PredicateKindError


class AttrKind(str, enum.Enum):
    LABELS = "labels"
    NUMERIC = "numeric"


class PredicateKind(str, enum.Enum):
    CONTAIN = "contain"
    EQUAL = "equal"
    RANGE = "range"


@dataclass(frozen=True)
class Attribute:
    """Filter attribute of a single item: a label set or a numeric value."""

    labels: tuple[int, ...] | None = None
    value: float | None = None

    def __post_init__(self):
        if (self.labels is None) == (self.value is None):
            raise ContractViolation("exactly one of labels/value must be set")
        if self.labels is not None:
            labels = tuple(int(x) for x in self.labels)
            if any(x < 0 for x in labels):
                raise ContractViolation("label ids must be non-negative")
            if len(set(labels)) != len(labels):
                raise ContractViolation(f"duplicate labels in {labels}")
            object.__setattr__(self, "labels", tuple(sorted(labels)))
        elif not np.isfinite(self.value):
            raise ContractViolation("numeric attribute must be finite")

    @property
    def kind(self) -> AttrKind:
        return AttrKind.LABELS if self.labels is not None else AttrKind.NUMERIC


@dataclass(frozen=True)
class FilterConstraint:
    """Query-side filter: a label set (containment/equality) or a closed range."""

    kind: PredicateKind
    labels: tuple[int, ...] = ()
    low: float | None = None
    high: float | None = None

    def __post_init__(self):
        kind = PredicateKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is PredicateKind.RANGE:
            if self.low is None or self.high is None:
                raise ContractViolation("range constraint needs low and high")
            if not (np.isfinite(self.low) and np.isfinite(self.high)):
                raise ContractViolation("range endpoints must be finite")
            if self.low > self.high:
                raise ContractViolation(f"empty range [{self.low}, {self.high}]")
            if self.labels:
                raise ContractViolation("range constraint carries no labels")
        else:
            if self.low is not None or self.high is not None:
                raise ContractViolation("label constraint carries no range")
            labels = tuple(sorted({int(x) for x in self.labels}))
            object.__setattr__(self, "labels", labels)

    @classmethod
    def contain(cls, labels: Iterable[int]) -> "FilterConstraint":
        return cls(PredicateKind.CONTAIN, labels=tuple(labels))

    @classmethod
    def equal(cls, labels: Iterable[int]) -> "FilterConstraint":
        return cls(PredicateKind.EQUAL, labels=tuple(labels))

    @classmethod
    def range(cls, low: float, high: float) -> "FilterConstraint":
        return cls(PredicateKind.RANGE, low=float(low), high=float(high))

    @property
    def attr_kind(self) -> AttrKind:
        return AttrKind.NUMERIC if self.kind is PredicateKind.RANGE else AttrKind.LABELS

    def to_json(self) -> dict:
        if self.kind is PredicateKind.RANGE:
            return {"kind": "range", "l": self.low, "r": self.high}
        return {"kind": self.kind.value, "labels": list(self.labels)}

    @classmethod
    def from_json(cls, obj: dict) -> "FilterConstraint":
        kind = PredicateKind(obj["kind"])
        if kind is PredicateKind.RANGE:
            return cls.range(obj["l"], obj["r"])
        return cls(kind, labels=tuple(obj["labels"]))


@dataclass
class FilteredQuery:
    vector: np.ndarray
    constraint: FilterConstraint
    k: int = 10

    def __post_init__(self):
        self.vector = np.ascontiguousarray(self.vector, dtype=np.float32)
        if self.vector.ndim != 1:
            raise ContractViolation("query vector must be 1-d")
        if self.k < 1:
            raise ContractViolation("k must be >= 1")


def evaluate_predicate(attr: Attribute, constraint: FilterConstraint) -> bool:
    if attr.kind is not constraint.attr_kind:
        raise PredicateKindError(
            f"{constraint.kind.value} predicate on {attr.kind.value} attribute"
        )
    if constraint.kind is PredicateKind.RANGE:
        return constraint.low <= attr.value <= constraint.high
    if constraint.kind is PredicateKind.CONTAIN:
        return set(constraint.labels).issubset(attr.labels)
    return tuple(constraint.labels) == attr.labels


def distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractViolation(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ContractViolation("non-finite vector component")
    diff = a - b
    return float(np.sqrt(np.dot(diff, diff)))


@dataclass(eq=False)
class AttributedDataset:
    """Base vectors with one attribute per row.

    Label attributes are held in CSR form (``label_indptr``/``label_indices``,
    each row sorted and duplicate free); numeric attributes in ``values``.
    Use :meth:`from_labels` / :meth:`from_values` rather than the raw
    constructor.
    """

    vectors: np.ndarray
    attr_kind: AttrKind
    values: np.ndarray | None = None
    label_indptr: np.ndarray | None = None
    label_indices: np.ndarray | None = None
    _postings: list | None = field(default=None, repr=False)
    _label_sizes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        X = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ContractViolation(f"vectors must be (N>=1, d>=1), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ContractViolation("non-finite vector component")
        X.setflags(write=False)
        self.vectors = X
        self.attr_kind = AttrKind(self.attr_kind)
        n = X.shape[0]
        if self.attr_kind is AttrKind.NUMERIC:
            v = np.ascontiguousarray(self.values, dtype=np.float64)
            if v.shape != (n,) or not np.all(np.isfinite(v)):
                raise ContractViolation("need one finite numeric attribute per row")
            v.setflags(write=False)
            self.values = v
        else:
            indptr = np.ascontiguousarray(self.label_indptr, dtype=np.int64)
            indices = np.ascontiguousarray(self.label_indices, dtype=np.int64)
            if indptr.shape != (n + 1,) or indptr[0] != 0 or indptr[-1] != len(indices):
                raise ContractViolation("malformed label CSR")
            if len(indices) and indices.min() < 0:
                raise ContractViolation("label ids must be non-negative")
            sizes = np.diff(indptr)
            if np.any(sizes < 0):
                raise ContractViolation("malformed label CSR")
            # rows must be strictly increasing (sorted, no duplicates)
            if len(indices) > 1:
                step = np.diff(indices)
                row_start = np.zeros(len(indices), dtype=bool)
                row_start[indptr[:-1][sizes > 0]] = True
                if np.any((step <= 0) & ~row_start[1:]):
                    raise ContractViolation("label rows must be sorted and duplicate free")
            indptr.setflags(write=False)
            indices.setflags(write=False)
            self.label_indptr, self.label_indices = indptr, indices
            self._label_sizes = sizes
            self._postings = _build_postings(indptr, indices)

    @classmethod
    def from_labels(cls, vectors, labels: Sequence[Iterable[int]]) -> "AttributedDataset":
        rows = [sorted(set(int(x) for x in row)) for row in labels]
        if len(rows) != len(vectors):
            raise ContractViolation("need one label set per row")
        for row, raw in zip(rows, labels):
            if len(row) != len(list(raw)):
                raise ContractViolation(f"duplicate labels in {list(raw)}")
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        indices = np.fromiter((x for r in rows for x in r), dtype=np.int64, count=int(indptr[-1]))
        return cls(vectors, AttrKind.LABELS, label_indptr=indptr, label_indices=indices)

    @classmethod
    def from_values(cls, vectors, values) -> "AttributedDataset":
        return cls(vectors, AttrKind.NUMERIC, values=values)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.n

    def labels_of(self, i: int) -> tuple[int, ...]:
        lo, hi = self.label_indptr[i], self.label_indptr[i + 1]
        return tuple(int(x) for x in self.label_indices[lo:hi])

    def attribute(self, i: int) -> Attribute:
        if self.attr_kind is AttrKind.NUMERIC:
            return Attribute(value=float(self.values[i]))
        return Attribute(labels=self.labels_of(i))

    def subset(self, ids) -> "AttributedDataset":
        ids = np.asarray(ids, dtype=np.int64)
        X = self.vectors[ids]
        if self.attr_kind is AttrKind.NUMERIC:
            return AttributedDataset.from_values(X, self.values[ids])
        return AttributedDataset.from_labels(X, [self.labels_of(i) for i in ids])

    def valid_mask(self, constraint: FilterConstraint) -> np.ndarray:
        """Boolean array, True where the item passes ``constraint``."""
        if constraint.attr_kind is not self.attr_kind:
            raise PredicateKindError(
                f"{constraint.kind.value} predicate on {self.attr_kind.value} dataset"
            )
        if constraint.kind is PredicateKind.RANGE:
            return (self.values >= constraint.low) & (self.values <= constraint.high)
        want = constraint.labels
        if not want:
            mask = np.ones(self.n, dtype=bool)
        else:
            hits = np.zeros(self.n, dtype=np.int32)
            for label in want:
                if label >= len(self._postings):
                    return np.zeros(self.n, dtype=bool)
                hits[self._postings[label]] += 1
            mask = hits == len(want)
        if constraint.kind is PredicateKind.EQUAL:
            mask &= self._label_sizes == len(want)
        return mask

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.attr_kind.value.encode())
        h.update(np.asarray(self.vectors.shape, dtype=np.int64).tobytes())
        h.update(self.vectors.tobytes())
        if self.attr_kind is AttrKind.NUMERIC:
            h.update(self.values.tobytes())
        else:
            h.update(self.label_indptr.tobytes())
            h.update(self.label_indices.tobytes())
        return h.hexdigest()


def _build_postings(indptr: np.ndarray, indices: np.ndarray) -> list[np.ndarray]:
    if len(indices) == 0:
        return []
    rows = np.repeat(np.arange(len(indptr) - 1, dtype=np.int64), np.diff(indptr))
    order = np.argsort(indices, kind="stable")
    sorted_labels = indices[order]
    bounds = np.searchsorted(sorted_labels, np.arange(int(sorted_labels[-1]) + 2))
    return [rows[order[bounds[j]:bounds[j + 1]]] for j in range(len(bounds) - 1)]


def _check_query(dataset: AttributedDataset, vector) -> np.ndarray:
    q = np.asarray(vector, dtype=np.float64)
    if q.shape != (dataset.dim,):
        raise ContractViolation(f"query has shape {q.shape}, dataset d={dataset.dim}")
    return q


def squared_distances(dataset: AttributedDataset, vector, ids=None) -> np.ndarray:
    q = _check_query(dataset, vector)
    from ._kernels import sqdist_many

    ids = np.arange(dataset.n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    return sqdist_many(dataset.vectors, ids, np.asarray(q, dtype=np.float64))


def _top_by_distance(ids: np.ndarray, sq: np.ndarray, k: int) -> np.ndarray:
    """Positions of the ``k`` smallest ``(sq, id)`` pairs, in order."""
    if len(ids) > k:
        kth = np.partition(sq, k - 1)[k - 1]
        keep = np.flatnonzero(sq <= kth)
    else:
        keep = np.arange(len(ids))
    order = np.lexsort((ids[keep], sq[keep]))
    return keep[order[:k]]


def global_selectivity(dataset: AttributedDataset, constraint: FilterConstraint) -> float:
    return float(np.count_nonzero(dataset.valid_mask(constraint))) / dataset.n


def exact_knn(dataset: AttributedDataset, vector, m: int) -> np.ndarray:
    """Ids of the exact unfiltered ``m`` nearest items."""
    if not 1 <= m <= dataset.n:
        raise ContractViolation(f"m must be in [1, {dataset.n}], got {m}")
    ids = np.arange(dataset.n, dtype=np.int64)
    sq = squared_distances(dataset, vector)
    return ids[_top_by_distance(ids, sq, m)]


def local_correlation(dataset: AttributedDataset, query: FilteredQuery, m: int) -> float:
    """Fraction of the exact top-``m`` neighbours of the query that pass its filter."""
    top = exact_knn(dataset, query.vector, m)
    mask = dataset.valid_mask(query.constraint)
    return float(np.count_nonzero(mask[top])) / m


def filtered_knn_arrays(dataset: AttributedDataset, query: FilteredQuery, mask=None):
    """Exact filtered top-k as ``(ids, distances)`` arrays."""
    if mask is None:
        mask = dataset.valid_mask(query.constraint)
    ids = np.flatnonzero(mask).astype(np.int64)
    if len(ids) == 0:
        return ids, np.zeros(0)
    sq = squared_distances(dataset, query.vector, ids)
    pos = _top_by_distance(ids, sq, query.k)
    return ids[pos], np.sqrt(sq[pos])


def brute_force_filtered_knn(dataset: AttributedDataset, query: FilteredQuery) -> list[tuple[int, float]]:
    ids, dist = filtered_knn_arrays(dataset, query)
    return [(int(i), float(d)) for i, d in zip(ids, dist)]
