import numpy as np
import pytest

from probeann.dataset import AttributedDataset, FilterConstraint, FilteredQuery
from probeann.graph import ProximityGraph, build_graph
from probeann.workload import gen_attributes, gen_vectors, range_for_selectivity


def tiny_graph(adj: dict[int, list[int]], entry: int = 0, M: int = 4) -> ProximityGraph:
    """Single-layer graph with the given adjacency lists."""
    n = len(adj)
    indptr = np.zeros((1, n + 1), dtype=np.int64)
    indptr[0, 1:] = np.cumsum([len(adj[u]) for u in range(n)])
    indices = np.array([v for u in range(n) for v in adj[u]], dtype=np.int32)
    return ProximityGraph(indptr, indices, np.zeros(n, dtype=np.int64), entry, 1, M, 2 * M, 8)


@pytest.fixture(scope="session")
def eight_node():
    """Line-of-sight fixture: query at 0, landing node 0 at distance 0.5.

    After three pops (budget 11) the search has visited all 8 nodes, 3 of them
    valid, and holds 5 in its queue, 2 of them valid.
    """
    X = np.array([[0.5], [1], [2], [3], [4], [5], [6], [7]], dtype=np.float32)
    valid_ids = [1, 4, 7]
    values = np.zeros(8)
    values[valid_ids] = 1.0
    ds = AttributedDataset.from_values(X, values)
    adj = {0: [1, 2, 3], 1: [0, 4, 5], 2: [0, 6, 7], 3: [0], 4: [1], 5: [1], 6: [2], 7: [2]}
    graph = tiny_graph(adj)
    query = FilteredQuery(np.array([0.0], dtype=np.float32), FilterConstraint.range(1, 1), k=10)
    return graph, ds, query


@pytest.fixture(scope="session")
def small_world():
    """1k x 16 corpus with numeric and label attributes over the same vectors, plus 200 query rows."""
    mix = gen_vectors(1200, 16, 10, seed=3, sigma=0.05)
    base_mix = type(mix)(mix.vectors[:1000], mix.centers, mix.assignment[:1000])
    numeric = gen_attributes(base_mix, "independent-range", seed=4).dataset()
    labelled = gen_attributes(base_mix, "cluster-labels", seed=5, n_labels=12).dataset()
    graph = build_graph(numeric.vectors, M=8, ef_construction=64, seed=0)
    rng = np.random.default_rng(6)
    sorted_vals = np.sort(numeric.values)
    queries = []
    for j, x in enumerate(mix.vectors[1000:]):
        kind = j % 3
        if kind == 0:
            lo, hi = range_for_selectivity(sorted_vals, float(rng.integers(1, 10_001)),
                                           float(rng.choice([0.01, 0.05, 0.2])))
            queries.append(("numeric", FilteredQuery(x, FilterConstraint.range(lo, hi), 10)))
        else:
            own = labelled.labels_of(int(rng.integers(1000)))
            c = FilterConstraint.contain(own[:1]) if kind == 1 else FilterConstraint.equal(own)
            queries.append(("labels", FilteredQuery(x, c, 10)))
    return {"numeric": numeric, "labels": labelled, "graph": graph, "queries": queries}


# criterion number -> (passed, detail), filled by the acceptance suite
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
