"""Compiled kernels for the uniform grid index on the torus."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _torus_sqdist(points, i, q):
    s = 0.0
    for a in range(q.shape[0]):
        t = points[i, a] - q[a]
        t -= np.floor(t + 0.5)
        s += t * t
    return s


@njit(cache=True, nogil=True)
def build_grid(points, m):
    """Sort points into m^d cells; returns (order, starts)."""
    n, d = points.shape
    ids = np.empty(n, dtype=np.int64)
    for i in range(n):
        lin = 0
        for a in range(d):
            c = int(points[i, a] * m)
            if c >= m:
                c = m - 1
            elif c < 0:
                c = 0
            lin = lin * m + c
        ids[i] = lin
    order = np.argsort(ids, kind="mergesort")
    ncell = m**d
    starts = np.zeros(ncell + 1, dtype=np.int64)
    for i in range(n):
        starts[ids[i] + 1] += 1
    for c in range(ncell):
        starts[c + 1] += starts[c]
    return order, starts


@njit(cache=True, nogil=True)
def _insert(best, k, val):
    # best is sorted ascending and holds k slots
    if val >= best[k - 1]:
        return
    j = k - 1
    while j > 0 and best[j - 1] > val:
        best[j] = best[j - 1]
        j -= 1
    best[j] = val


@njit(cache=True, nogil=True)
def _scan_cell(points, order, starts, lin, q, best, k, skip_zero):
    for t in range(starts[lin], starts[lin + 1]):
        s = _torus_sqdist(points, order[t], q)
        if s > 0.0 or not skip_zero:
            _insert(best, k, s)


@njit(cache=True, nogil=True)
def knn_query(points, order, starts, m, queries, k, skip_zero):
    """k-th nearest torus distance from each query (inf if absent).

    With ``skip_zero`` points at distance exactly zero from the query are skipped.
    """
    n, d = points.shape
    nq = queries.shape[0]
    out = np.empty(nq)
    h = 1.0 / m
    home = np.empty(d, dtype=np.int64)
    off = np.empty(d, dtype=np.int64)
    best = np.empty(k)
    for iq in range(nq):
        q = queries[iq]
        for a in range(d):
            c = int(q[a] * m)
            home[a] = min(max(c, 0), m - 1)
        best[:] = np.inf
        s = 0
        while True:
            if 2 * s + 1 >= m:
                # rings cover the whole grid: finish by brute force
                best[:] = np.inf
                for i in range(n):
                    v = _torus_sqdist(points, i, q)
                    if v > 0.0 or not skip_zero:
                        _insert(best, k, v)
                break
            width = 2 * s + 1
            total = width**d
            for code in range(total):
                rem = code
                ring = False
                for a in range(d):
                    off[a] = rem % width - s
                    rem //= width
                    if off[a] == s or off[a] == -s:
                        ring = True
                if not ring:
                    continue
                lin = 0
                for a in range(d):
                    lin = lin * m + (home[a] + off[a]) % m
                _scan_cell(points, order, starts, lin, q, best, k, skip_zero)
            if best[k - 1] <= (s * h) ** 2:
                break
            s += 1
        out[iq] = np.sqrt(best[k - 1])
    return out


@njit(cache=True, nogil=True)
def count_within(points, order, starts, m, queries, r, strict):
    """Number of points within distance r (strictly if ``strict``) of each query."""
    n, d = points.shape
    nq = queries.shape[0]
    out = np.zeros(nq, dtype=np.int64)
    reach = int(np.ceil(r * m))
    r2 = r * r
    if 2 * reach + 1 >= m:
        for iq in range(nq):
            c = 0
            for i in range(n):
                v = _torus_sqdist(points, i, queries[iq])
                if v < r2 or (not strict and v == r2):
                    c += 1
            out[iq] = c
        return out
    width = 2 * reach + 1
    total = width**d
    home = np.empty(d, dtype=np.int64)
    for iq in range(nq):
        q = queries[iq]
        for a in range(d):
            home[a] = min(max(int(q[a] * m), 0), m - 1)
        c = 0
        for code in range(total):
            rem = code
            lin = 0
            for a in range(d):
                o = rem % width - reach
                rem //= width
                lin = lin * m + (home[a] + o) % m
            for t in range(starts[lin], starts[lin + 1]):
                v = _torus_sqdist(points, order[t], q)
                if v < r2 or (not strict and v == r2):
                    c += 1
        out[iq] = c
    return out


@njit(cache=True, nogil=True)
def count_within_radii(points, order, starts, m, queries, radii):
    """Number of points strictly inside B(query_i, radii_i), per query."""
    n, d = points.shape
    nq = queries.shape[0]
    out = np.zeros(nq, dtype=np.int64)
    home = np.empty(d, dtype=np.int64)
    for iq in range(nq):
        q = queries[iq]
        r = radii[iq]
        r2 = r * r
        reach = int(np.ceil(r * m))
        c = 0
        if 2 * reach + 1 >= m:
            for i in range(n):
                if _torus_sqdist(points, i, q) < r2:
                    c += 1
            out[iq] = c
            continue
        width = 2 * reach + 1
        total = width**d
        for a in range(d):
            home[a] = min(max(int(q[a] * m), 0), m - 1)
        for code in range(total):
            rem = code
            lin = 0
            for a in range(d):
                o = rem % width - reach
                rem //= width
                lin = lin * m + (home[a] + o) % m
            for t in range(starts[lin], starts[lin + 1]):
                if _torus_sqdist(points, order[t], q) < r2:
                    c += 1
        out[iq] = c
    return out


@njit(cache=True, nogil=True)
def pairs_within(points, order, starts, m, r):
    """All index pairs (i < j) at torus distance <= r."""
    n, d = points.shape
    reach = int(np.ceil(r * m))
    r2 = r * r
    cap = 16
    out = np.empty((cap, 2), dtype=np.int64)
    cnt = 0
    if 2 * reach + 1 >= m:
        for i in range(n):
            for j in range(i + 1, n):
                if _torus_sqdist(points, j, points[i]) <= r2:
                    if cnt == cap:
                        cap *= 2
                        tmp = np.empty((cap, 2), dtype=np.int64)
                        tmp[:cnt] = out[:cnt]
                        out = tmp
                    out[cnt, 0] = i
                    out[cnt, 1] = j
                    cnt += 1
        return out[:cnt]
    width = 2 * reach + 1
    total = width**d
    home = np.empty(d, dtype=np.int64)
    for i in range(n):
        q = points[i]
        for a in range(d):
            home[a] = min(max(int(q[a] * m), 0), m - 1)
        for code in range(total):
            rem = code
            lin = 0
            for a in range(d):
                o = rem % width - reach
                rem //= width
                lin = lin * m + (home[a] + o) % m
            for t in range(starts[lin], starts[lin + 1]):
                j = order[t]
                if j <= i:
                    continue
                if _torus_sqdist(points, j, q) <= r2:
                    if cnt == cap:
                        cap *= 2
                        tmp = np.empty((cap, 2), dtype=np.int64)
                        tmp[:cnt] = out[:cnt]
                        out = tmp
                    out[cnt, 0] = i
                    out[cnt, 1] = j
                    cnt += 1
    return out[:cnt]


@njit(cache=True, nogil=True)
def gillespie(gen, m0, mass, horizon):
    """Birth-death event loop on particle labels.

    Initial particles are labelled 0..m0-1, births m0, m0+1, ... in order.
    Returns (labels alive at the horizon, number of births).
    """
    cap = max(16, 2 * m0 + 16)
    alive = np.empty(cap, dtype=np.int64)
    for i in range(m0):
        alive[i] = i
    count = m0
    births = 0
    t = 0.0
    while True:
        rate = mass + count
        if rate <= 0.0:
            break
        t += gen.standard_exponential() / rate
        if t > horizon:
            break
        if gen.random() * rate < mass:
            if count == cap:
                cap *= 2
                tmp = np.empty(cap, dtype=np.int64)
                tmp[:count] = alive[:count]
                alive = tmp
            alive[count] = m0 + births
            births += 1
            count += 1
        else:
            j = min(int(gen.random() * count), count - 1)
            alive[j] = alive[count - 1]
            count -= 1
    return np.sort(alive[:count]), births
