import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probeann.dataset import (Attribute, AttributedDataset, FilterConstraint, FilteredQuery,
                              brute_force_filtered_knn, distance, evaluate_predicate,
                              global_selectivity, local_correlation)
from probeann.errors import ContractViolation, PredicateKindError

from _reference import ref_filtered_knn


def test_distance_basics():
    assert distance([0, 0], [0, 0]) == 0.0
    assert distance([3, 0], [0, 4]) == 5.0
    with pytest.raises(ContractViolation):
        distance([1, 2], [1, 2, 3])


def test_distance_matches_scalar_loop():
    rng = np.random.default_rng(1)
    a, b = rng.random(32).astype(np.float32), rng.random(32).astype(np.float32)
    ref = math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))
    assert distance(a, b) == pytest.approx(ref, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=9, max_size=9))
def test_distance_triangle_and_symmetry(vals):
    a, b, c = (np.array(vals[i:i + 3]) for i in (0, 3, 6))
    assert distance(a, b) == distance(b, a)
    assert distance(a, c) <= distance(a, b) + distance(b, c) + 1e-6


def test_predicates():
    labels = Attribute(labels=(1, 2, 3))
    assert evaluate_predicate(labels, FilterConstraint.contain([1, 3]))
    assert not evaluate_predicate(labels, FilterConstraint.equal([1, 3]))
    assert evaluate_predicate(labels, FilterConstraint.equal([3, 2, 1]))
    assert evaluate_predicate(Attribute(value=500), FilterConstraint.range(500, 500))
    assert not evaluate_predicate(Attribute(value=500.5), FilterConstraint.range(400, 500))
    with pytest.raises(PredicateKindError):
        evaluate_predicate(labels, FilterConstraint.range(0, 1))
    with pytest.raises(PredicateKindError):
        evaluate_predicate(Attribute(value=1.0), FilterConstraint.contain([1]))


@settings(max_examples=100, deadline=None)
@given(st.sets(st.integers(0, 8)), st.sets(st.integers(0, 8), min_size=1))
def test_equality_implies_containment(item, query):
    attr = Attribute(labels=tuple(item))
    if evaluate_predicate(attr, FilterConstraint.equal(query)):
        assert evaluate_predicate(attr, FilterConstraint.contain(query))


def test_type_invariants():
    with pytest.raises(ContractViolation):
        Attribute(labels=(1, 1))
    with pytest.raises(ContractViolation):
        Attribute(labels=(1,), value=2.0)
    with pytest.raises(ContractViolation):
        FilterConstraint.range(5, 1)
    with pytest.raises(ContractViolation):
        FilterConstraint.range(0, math.inf)
    with pytest.raises(ContractViolation):
        FilteredQuery(np.zeros(3), FilterConstraint.range(0, 1), k=0)
    with pytest.raises(ContractViolation):
        AttributedDataset.from_values(np.array([[np.nan]]), [1.0])
    with pytest.raises(ContractViolation):
        AttributedDataset.from_values(np.zeros((0, 2)), [])


def test_valid_mask_matches_predicate(small_world):
    ds = small_world["labels"]
    for _, q in small_world["queries"][:60]:
        if q.constraint.attr_kind is not ds.attr_kind:
            continue
        mask = ds.valid_mask(q.constraint)
        expect = [evaluate_predicate(ds.attribute(i), q.constraint) for i in range(ds.n)]
        assert mask.tolist() == expect


def test_global_selectivity_cases():
    rng = np.random.default_rng(0)
    X = rng.random((20000, 2)).astype(np.float32)
    ds = AttributedDataset.from_values(X, rng.integers(1, 10_001, size=20000))
    assert global_selectivity(ds, FilterConstraint.range(1, 10_000)) == 1.0
    assert global_selectivity(ds, FilterConstraint.range(20_000, 30_000)) == 0.0
    s = global_selectivity(ds, FilterConstraint.range(1001, 1500))
    assert abs(s - 0.05) < 0.006  # binomial sd here is ~0.0015
    labelled = AttributedDataset.from_labels(X[:3], [[1], [1, 2], [3]])
    assert global_selectivity(labelled, FilterConstraint.contain([1])) == pytest.approx(2 / 3)


def test_local_correlation_extremes(small_world):
    ds = small_world["numeric"]
    q = small_world["queries"][0][1]
    assert local_correlation(ds, q, ds.n) == global_selectivity(ds, q.constraint)
    # a cluster whose items all match, and its inversion
    rng = np.random.default_rng(2)
    near = rng.normal(0, 0.01, (50, 4))
    far = rng.normal(5, 0.01, (50, 4))
    X = np.vstack([near, far]).astype(np.float32)
    values = np.r_[np.ones(50), np.zeros(50)]
    d2 = AttributedDataset.from_values(X, values)
    zero = np.zeros(4, dtype=np.float32)
    assert local_correlation(d2, FilteredQuery(zero, FilterConstraint.range(1, 1)), 50) == 1.0
    assert local_correlation(d2, FilteredQuery(zero, FilterConstraint.range(0, 0)), 50) == 0.0


def test_brute_force_against_independent_scan(small_world):
    for name, q in small_world["queries"]:
        ds = small_world[name]
        got = brute_force_filtered_knn(ds, q)
        ok = [evaluate_predicate(ds.attribute(i), q.constraint) for i in range(ds.n)]
        assert [i for i, _ in got] == ref_filtered_knn(ds.vectors, ok, q.vector, q.k)
        d = [x for _, x in got]
        assert d == sorted(d)


def test_brute_force_edge_cases():
    X = np.array([[0.0], [1.0], [1.0], [3.0]], dtype=np.float32)
    ds = AttributedDataset.from_values(X, [1, 1, 1, 2])
    q = FilteredQuery(np.array([1.0]), FilterConstraint.range(5, 6), k=2)
    assert brute_force_filtered_knn(ds, q) == []
    q = FilteredQuery(np.array([1.0]), FilterConstraint.range(1, 1), k=3)
    assert [i for i, _ in brute_force_filtered_knn(ds, q)] == [1, 2, 0]  # tie broken by id
    q = FilteredQuery(np.array([1.0]), FilterConstraint.range(1, 2), k=10)
    assert len(brute_force_filtered_knn(ds, q)) == 4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_no_valid_item_closer_than_last(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((60, 3)).astype(np.float32)
    ds = AttributedDataset.from_values(X, rng.integers(0, 4, 60))
    q = FilteredQuery(rng.random(3), FilterConstraint.range(1, 2), k=5)
    got = brute_force_filtered_knn(ds, q)
    mask = ds.valid_mask(q.constraint)
    assert all(mask[i] for i, _ in got)
    if got:
        worst = got[-1][1]
        chosen = {i for i, _ in got}
        for i in np.flatnonzero(mask):
            if i not in chosen:
                assert distance(X[i], q.vector) >= worst - 1e-9


def test_subset_and_hash():
    X = np.arange(8, dtype=np.float32).reshape(4, 2)
    ds = AttributedDataset.from_labels(X, [[0], [1, 2], [2], []])
    sub = ds.subset([1, 3])
    assert sub.labels_of(0) == (1, 2) and sub.labels_of(1) == ()
    assert ds.content_hash() == AttributedDataset.from_labels(X, [[0], [2, 1], [2], []]).content_hash()
    assert ds.content_hash() != sub.content_hash()
