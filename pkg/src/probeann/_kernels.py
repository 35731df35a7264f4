"""Compiled inner loops for graph construction and traversal.

Heaps are flat ``(dist, id)`` array pairs ordered lexicographically, so ties
in distance always resolve to the lower id.  Max-heaps store negated keys.
Vectors are float32; every distance is accumulated in float64 as a squared
L2 value.  Callers take the square root when reporting.
"""

import numpy as np
from numba import njit

# slots of the int64 search-state vector
QSIZE = 0
RSIZE = 1
CNT = 2
HOPS = 3
TOTAL = 4  # nodes inspected (all modes)
VALID = 5  # inspected nodes that passed the filter
GT_LEFT = 6  # ground-truth ids not yet visited
W_GT = 7  # cnt at the moment the last ground-truth id was visited, -1 if not yet
TOTAL1 = 8  # pre-filter: inspected 1-hop neighbours
VALID1 = 9  # pre-filter: valid 1-hop neighbours
N_SLOTS = 10


@njit(inline="always")
def _less(d1, i1, d2, i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


@njit(inline="always")
def heap_push(hd, hi, size, d, i):
    pos = size
    while pos > 0:
        parent = (pos - 1) >> 1
        if _less(d, i, hd[parent], hi[parent]):
            hd[pos] = hd[parent]
            hi[pos] = hi[parent]
            pos = parent
        else:
            break
    hd[pos] = d
    hi[pos] = i
    return size + 1


@njit(inline="always")
def _sift_down(hd, hi, size, d, i):
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _less(hd[child + 1], hi[child + 1], hd[child], hi[child]):
            child += 1
        if _less(hd[child], hi[child], d, i):
            hd[pos] = hd[child]
            hi[pos] = hi[child]
            pos = child
        else:
            break
    hd[pos] = d
    hi[pos] = i


@njit(inline="always")
def heap_pop(hd, hi, size):
    """Drop the root; the caller reads ``hd[0], hi[0]`` beforehand."""
    size -= 1
    if size > 0:
        _sift_down(hd, hi, size, hd[size], hi[size])
    return size


@njit(inline="always")
def heap_replace_top(hd, hi, size, d, i):
    _sift_down(hd, hi, size, d, i)


@njit(inline="always")
def sqdist(X, u, q):
    s = 0.0
    for j in range(q.shape[0]):
        t = np.float64(X[u, j]) - q[j]
        s += t * t
    return s


@njit(inline="always")
def sqdist_rows(X, u, v):
    s = 0.0
    for j in range(X.shape[1]):
        t = np.float64(X[u, j]) - np.float64(X[v, j])
        s += t * t
    return s


@njit(cache=True)
def sqdist_many(X, ids, q):
    """Same accumulation order as the traversal kernels, so results agree bit for bit."""
    out = np.empty(ids.shape[0])
    for r in range(ids.shape[0]):
        out[r] = sqdist(X, ids[r], q)
    return out


# ---------------------------------------------------------------- build


@njit(cache=True)
def _sort_pairs(d, ids, n):
    for a in range(1, n):
        kd = d[a]
        ki = ids[a]
        b = a - 1
        while b >= 0 and _less(kd, ki, d[b], ids[b]):
            d[b + 1] = d[b]
            ids[b + 1] = ids[b]
            b -= 1
        d[b + 1] = kd
        ids[b + 1] = ki


@njit(cache=True)
def _select_heuristic(X, cd, ci, n, m, out):
    """Keep a candidate only if it is closer to the base than to every kept one."""
    if n <= m:
        for a in range(n):
            out[a] = ci[a]
        return n
    kept = 0
    for a in range(n):
        if kept >= m:
            break
        good = True
        for s in range(kept):
            if sqdist_rows(X, ci[a], out[s]) < cd[a]:
                good = False
                break
        if good:
            out[kept] = ci[a]
            kept += 1
    return kept


@njit(cache=True)
def _search_layer(X, q, ep, ep_d, ef, layer, nbr, cnt, tags, tag, cd, ci, rd, ri, outd, outi):
    csize = heap_push(cd, ci, 0, ep_d, ep)
    rsize = heap_push(rd, ri, 0, -ep_d, -ep)
    tags[ep] = tag
    while csize > 0:
        d = cd[0]
        u = ci[0]
        if rsize >= ef and d > -rd[0]:
            break
        csize = heap_pop(cd, ci, csize)
        for j in range(cnt[layer, u]):
            v = nbr[layer, u, j]
            if tags[v] == tag:
                continue
            tags[v] = tag
            dv = sqdist(X, v, q)
            if rsize < ef or _less(dv, v, -rd[0], -ri[0]):
                csize = heap_push(cd, ci, csize, dv, v)
                if rsize < ef:
                    rsize = heap_push(rd, ri, rsize, -dv, -v)
                else:
                    heap_replace_top(rd, ri, rsize, -dv, -v)
    n = rsize
    for a in range(n - 1, -1, -1):
        outd[a] = -rd[0]
        outi[a] = -ri[0]
        rsize = heap_pop(rd, ri, rsize)
    return n


@njit(cache=True)
def build_hnsw(X, levels, M, M0, efc):
    """Insert rows in id order; returns (nbr, cnt, entry, top_level)."""
    n = X.shape[0]
    top = 0
    for i in range(n):
        if levels[i] > top:
            top = levels[i]
    nbr = np.full((top + 1, n, M0), -1, dtype=np.int32)
    cnt = np.zeros((top + 1, n), dtype=np.int32)
    tags = np.zeros(n, dtype=np.int64)
    cd = np.empty(n + 1)
    ci = np.empty(n + 1, dtype=np.int64)
    rd = np.empty(efc + 2)
    ri = np.empty(efc + 2, dtype=np.int64)
    wd = np.empty(efc + 2)
    wi = np.empty(efc + 2, dtype=np.int64)
    sel = np.empty(M0 + 1, dtype=np.int64)
    tmp = np.empty(M0 + 1, dtype=np.int64)
    pd = np.empty(M0 + 1)
    pi = np.empty(M0 + 1, dtype=np.int64)
    q = np.empty(X.shape[1])
    entry = 0
    maxlevel = levels[0]
    tag = 0
    for i in range(1, n):
        for j in range(X.shape[1]):
            q[j] = X[i, j]
        lvl = levels[i]
        cur = entry
        dcur = sqdist(X, cur, q)
        for layer in range(maxlevel, lvl, -1):
            changed = True
            while changed:
                changed = False
                base = cur
                for j in range(cnt[layer, base]):
                    v = nbr[layer, base, j]
                    dv = sqdist(X, v, q)
                    if dv < dcur:
                        dcur = dv
                        cur = v
                        changed = True
        for layer in range(min(lvl, maxlevel), -1, -1):
            tag += 1
            nres = _search_layer(X, q, cur, dcur, efc, layer, nbr, cnt, tags, tag, cd, ci, rd, ri, wd, wi)
            mmax = M0 if layer == 0 else M
            nsel = _select_heuristic(X, wd, wi, nres, M, sel)
            for s in range(nsel):
                nbr[layer, i, s] = sel[s]
            cnt[layer, i] = nsel
            next_cur = sel[0]
            next_d = wd[0]
            for s in range(nsel):
                u = sel[s]
                c = cnt[layer, u]
                if c < mmax:
                    nbr[layer, u, c] = i
                    cnt[layer, u] = c + 1
                    continue
                for a in range(c):
                    pi[a] = nbr[layer, u, a]
                    pd[a] = sqdist_rows(X, u, pi[a])
                pi[c] = i
                pd[c] = sqdist_rows(X, u, i)
                _sort_pairs(pd, pi, c + 1)
                keep = _select_heuristic(X, pd, pi, c + 1, mmax, tmp)
                for a in range(keep):
                    nbr[layer, u, a] = tmp[a]
                for a in range(keep, mmax):
                    nbr[layer, u, a] = -1
                cnt[layer, u] = keep
            cur = next_cur
            dcur = next_d
        if lvl > maxlevel:
            maxlevel = lvl
            entry = i
    return nbr, cnt, entry, maxlevel


# ---------------------------------------------------------------- query


@njit(nogil=True, cache=True)
def greedy_route(X, q, indptr, indices, entry, top):
    """Greedy descent through every layer down to the base; returns (node, sqdist, ndc)."""
    cur = entry
    dcur = sqdist(X, cur, q)
    ndc = 1
    for layer in range(top, -1, -1):
        changed = True
        while changed:
            changed = False
            base = cur
            for j in range(indptr[layer, base], indptr[layer, base + 1]):
                v = indices[j]
                dv = sqdist(X, v, q)
                ndc += 1
                if dv < dcur:
                    dcur = dv
                    cur = v
                    changed = True
    return cur, dcur, ndc


@njit(inline="always")
def _result_insert(rd, ri, st, d, v, cap):
    if st[RSIZE] < cap:
        st[RSIZE] = heap_push(rd, ri, st[RSIZE], -d, -v)
    elif _less(d, v, -rd[0], -ri[0]):
        heap_replace_top(rd, ri, st[RSIZE], -d, -v)


@njit(inline="always")
def _note_truth(st, gtmark, v):
    """Returns True when this visit completed the ground truth."""
    if gtmark[v]:
        st[GT_LEFT] -= 1
        if st[GT_LEFT] == 0 and st[W_GT] < 0:
            st[W_GT] = st[CNT]
            return True
    return False


@njit(nogil=True, cache=True)
def seed_post(u, d, valid, gtmark, visited, qd, qi, rd, ri, st, pool_cap):
    visited[u] = 1
    st[TOTAL] += 1
    st[QSIZE] = heap_push(qd, qi, st[QSIZE], d, u)
    if valid[u]:
        st[VALID] += 1
        _result_insert(rd, ri, st, d, u, pool_cap)
        _note_truth(st, gtmark, u)


@njit(nogil=True, cache=True)
def expand_post(X, q, indptr, indices, valid, gtmark, visited, qd, qi, rd, ri, st,
                budget, pool_cap, distance_stop, stop_on_gt):
    """Best-first expansion over the whole base layer, filtering only results.

    Returns True if it stopped because the ground truth was completed.
    """
    while st[CNT] < budget and st[QSIZE] > 0:
        if distance_stop and st[RSIZE] >= pool_cap and qd[0] > -rd[0]:
            break
        u = qi[0]
        st[QSIZE] = heap_pop(qd, qi, st[QSIZE])
        st[HOPS] += 1
        for j in range(indptr[0, u], indptr[0, u + 1]):
            v = indices[j]
            if visited[v]:
                continue
            visited[v] = 1
            d = sqdist(X, v, q)
            st[CNT] += 1
            st[TOTAL] += 1
            ok = valid[v]
            if ok:
                st[VALID] += 1
            if distance_stop and st[RSIZE] >= pool_cap and not _less(d, v, -rd[0], -ri[0]):
                continue
            st[QSIZE] = heap_push(qd, qi, st[QSIZE], d, v)
            if ok:
                _result_insert(rd, ri, st, d, v, pool_cap)
                if _note_truth(st, gtmark, v) and stop_on_gt:
                    return True
    return False


@njit(inline="always")
def _pre_inspect(X, q, v, valid, gtmark, visited, qd, qi, rd, ri, st, pool_cap, distance_stop):
    visited[v] = 1
    st[TOTAL] += 1
    d = sqdist(X, v, q)
    st[CNT] += 1
    if not valid[v]:
        return False
    st[VALID] += 1
    if distance_stop and st[RSIZE] >= pool_cap and not _less(d, v, -rd[0], -ri[0]):
        return False
    st[QSIZE] = heap_push(qd, qi, st[QSIZE], d, v)
    _result_insert(rd, ri, st, d, v, pool_cap)
    return _note_truth(st, gtmark, v)


@njit(nogil=True, cache=True)
def pre_expand_node(X, q, u, indptr, indices, valid, gtmark, visited, qd, qi, rd, ri, st,
                    pool_cap, distance_stop, stop_on_gt, two_hop_below):
    """Inspect the 1-hop list of ``u``; fall back to 2-hop when too few are valid."""
    lo = indptr[0, u]
    hi = indptr[0, u + 1]
    n_ok = 0
    for j in range(lo, hi):
        if valid[indices[j]]:
            n_ok += 1
    done = False
    for j in range(lo, hi):
        v = indices[j]
        if visited[v]:
            continue
        st[TOTAL1] += 1
        if valid[v]:
            st[VALID1] += 1
        if _pre_inspect(X, q, v, valid, gtmark, visited, qd, qi, rd, ri, st, pool_cap, distance_stop):
            done = True
            if stop_on_gt:
                return True
    if hi > lo and n_ok < two_hop_below * (hi - lo):
        for j in range(lo, hi):
            v = indices[j]
            if valid[v]:
                continue
            for jj in range(indptr[0, v], indptr[0, v + 1]):
                w = indices[jj]
                if visited[w]:
                    continue
                if _pre_inspect(X, q, w, valid, gtmark, visited, qd, qi, rd, ri, st, pool_cap, distance_stop):
                    done = True
                    if stop_on_gt:
                        return True
    return done


@njit(nogil=True, cache=True)
def seed_pre(X, q, u, d, indptr, indices, valid, gtmark, visited, qd, qi, rd, ri, st,
             pool_cap, distance_stop, two_hop_below):
    visited[u] = 1
    st[TOTAL] += 1
    st[TOTAL1] += 1
    if valid[u]:
        st[VALID] += 1
        st[VALID1] += 1
        st[QSIZE] = heap_push(qd, qi, st[QSIZE], d, u)
        _result_insert(rd, ri, st, d, u, pool_cap)
        _note_truth(st, gtmark, u)
    else:
        pre_expand_node(X, q, u, indptr, indices, valid, gtmark, visited, qd, qi, rd, ri, st,
                        pool_cap, distance_stop, False, two_hop_below)


@njit(nogil=True, cache=True)
def expand_pre(X, q, indptr, indices, valid, gtmark, visited, qd, qi, rd, ri, st,
               budget, pool_cap, distance_stop, stop_on_gt, two_hop_below):
    """Best-first expansion that only ever queues valid nodes."""
    while st[CNT] < budget and st[QSIZE] > 0:
        if distance_stop and st[RSIZE] >= pool_cap and qd[0] > -rd[0]:
            break
        u = qi[0]
        st[QSIZE] = heap_pop(qd, qi, st[QSIZE])
        st[HOPS] += 1
        if pre_expand_node(X, q, u, indptr, indices, valid, gtmark, visited, qd, qi, rd, ri, st,
                           pool_cap, distance_stop, stop_on_gt, two_hop_below) and stop_on_gt:
            return True
    return False
