# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled inner loops of the partition solver (see ``_kernels_py`` for semantics)."""
import numpy as np
cimport numpy as cnp
from libcpp.vector cimport vector
from libcpp.unordered_map cimport unordered_map
from cython.operator cimport dereference as deref, preincrement as inc

cnp.import_array()


def icm_sweeps(const long long[::1] indptr, const long long[::1] indices, const double[::1] w_csr,
               const long long[::1] comp, const double[:, ::1] Y, const double[:, ::1] H0,
               const double[:, ::1] H1, labels, int max_sweeps):
    cdef Py_ssize_t n = comp.shape[0]
    cdef Py_ssize_t dim = Y.shape[1]
    cdef cnp.ndarray[cnp.int8_t, ndim=1] out = np.ascontiguousarray(labels, dtype=np.int8).copy()
    cdef signed char[::1] lab = out
    cdef Py_ssize_t v, p, q
    cdef long long c, u
    cdef double cost0, cost1, t
    cdef int sweeps = 0
    cdef Py_ssize_t changed
    with nogil:
        while sweeps < max_sweeps:
            sweeps += 1
            changed = 0
            for v in range(n):
                c = comp[v]
                cost0 = 0.0
                cost1 = 0.0
                for q in range(dim):
                    t = Y[v, q] - H0[c, q]
                    cost0 = cost0 + t * t
                    t = Y[v, q] - H1[c, q]
                    cost1 = cost1 + t * t
                for p in range(indptr[v], indptr[v + 1]):
                    u = indices[p]
                    if comp[u] != c:
                        continue
                    if lab[u] == 0:
                        cost1 = cost1 + w_csr[p]
                    else:
                        cost0 = cost0 + w_csr[p]
                if lab[v] == 0 and cost1 < cost0:
                    lab[v] = 1
                    changed += 1
                elif lab[v] == 1 and cost0 < cost1:
                    lab[v] = 0
                    changed += 1
            if changed == 0:
                break
    return out, sweeps


def label_components(const long long[::1] indptr, const long long[::1] indices, const long long[::1] key):
    cdef Py_ssize_t n = key.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_arr = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stack_arr = np.empty(max(n, 1), dtype=np.int64)
    cdef long long[::1] stack = stack_arr
    cdef Py_ssize_t s, top, p
    cdef long long v, u, ks
    cdef long long ncomp = 0
    with nogil:
        for s in range(n):
            if out[s] >= 0:
                continue
            out[s] = ncomp
            top = 0
            stack[top] = s
            top += 1
            ks = key[s]
            while top > 0:
                top -= 1
                v = stack[top]
                for p in range(indptr[v], indptr[v + 1]):
                    u = indices[p]
                    if out[u] < 0 and key[u] == ks:
                        out[u] = ncomp
                        stack[top] = u
                        top += 1
            ncomp += 1
    return out_arr, ncomp


DEF CONNECT_BUDGET = 64


cdef bint _still_connected(const long long[::1] indptr, const long long[::1] indices,
                           long long[::1] comp, long long v, long long a,
                           long long[::1] stamp, long long mark, long long[::1] stack,
                           long long[::1] want) noexcept nogil:
    cdef Py_ssize_t p, top = 0, ntarget = 0, reached, expanded = 0
    cdef long long u, x
    for p in range(indptr[v], indptr[v + 1]):
        u = indices[p]
        if comp[u] == a:
            ntarget += 1
    if ntarget <= 1:
        return True
    # want[u] == mark flags the neighbors that must be reached
    for p in range(indptr[v], indptr[v + 1]):
        u = indices[p]
        if comp[u] == a:
            want[u] = mark
    stamp[v] = mark
    for p in range(indptr[v], indptr[v + 1]):
        u = indices[p]
        if comp[u] == a:
            stamp[u] = mark
            stack[0] = u
            top = 1
            break
    reached = 1
    while top > 0 and reached < ntarget:
        if expanded == CONNECT_BUDGET:
            return False
        expanded += 1
        top -= 1
        x = stack[top]
        for p in range(indptr[x], indptr[x + 1]):
            u = indices[p]
            if comp[u] == a and stamp[u] != mark:
                stamp[u] = mark
                if want[u] == mark:
                    reached += 1
                stack[top] = u
                top += 1
    return reached >= ntarget


def refine_moves(const long long[::1] indptr, const long long[::1] indices, const double[::1] w_csr,
                 comp_in, const double[:, ::1] Y, sums_in, size_in, long long k, int max_sweeps,
                 bint allow_new, const signed char[::1] frozen):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] comp_arr = np.array(comp_in, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] sums_arr = np.array(sums_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] size_arr = np.array(size_in, dtype=np.float64)
    cdef long long[::1] comp = comp_arr
    cdef double[:, ::1] S = sums_arr
    cdef double[::1] size = size_arr
    cdef Py_ssize_t n = comp.shape[0]
    cdef Py_ssize_t dim = Y.shape[1]
    cdef Py_ssize_t kcap = size.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] acc_arr = np.zeros(kcap, dtype=np.float64)
    cdef double[::1] acc = acc_arr
    cdef cnp.ndarray[cnp.int8_t, ndim=1] seen_arr = np.zeros(kcap, dtype=np.int8)
    cdef signed char[::1] seen = seen_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] touched_arr = np.empty(kcap, dtype=np.int64)
    cdef long long[::1] touched = touched_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stamp_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] stamp = stamp_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] want_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] want = want_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stack_arr = np.empty(max(n, 1), dtype=np.int64)
    cdef long long[::1] stack = stack_arr
    cdef long long mark = 0, moves = 0, moved, a, c, target
    cdef Py_ssize_t v, p, q, ntouched, ti
    cdef double na, nc, wa, dist, t, rem, best, delta
    cdef int sweeps = 0
    with nogil:
        while sweeps < max_sweeps:
            sweeps += 1
            moved = 0
            for v in range(n):
                if frozen[v]:
                    continue
                a = comp[v]
                na = size[a]
                ntouched = 0
                for p in range(indptr[v], indptr[v + 1]):
                    c = comp[indices[p]]
                    if not seen[c]:
                        seen[c] = 1
                        acc[c] = 0.0
                        touched[ntouched] = c
                        ntouched += 1
                    acc[c] = acc[c] + w_csr[p]
                wa = acc[a] if seen[a] else 0.0
                dist = 0.0
                for q in range(dim):
                    t = Y[v, q] - S[a, q] / na
                    dist = dist + t * t
                rem = -(na / (na - 1.0)) * dist if na > 1 else 0.0
                best = -1e-12
                target = -1
                for ti in range(ntouched):
                    c = touched[ti]
                    if c == a:
                        continue
                    nc = size[c]
                    dist = 0.0
                    for q in range(dim):
                        t = Y[v, q] - S[c, q] / nc
                        dist = dist + t * t
                    delta = rem + (nc / (nc + 1.0)) * dist + wa - acc[c]
                    if delta < best or (delta == best and target >= 0 and c < target):
                        best = delta
                        target = c
                if allow_new and na > 1:
                    delta = rem + wa
                    if delta < best:
                        best = delta
                        target = k
                for ti in range(ntouched):
                    seen[touched[ti]] = 0
                if target < 0:
                    continue
                if na > 1:
                    mark += 1
                    if not _still_connected(indptr, indices, comp, v, a, stamp, mark, stack, want):
                        continue
                if target == k:
                    k += 1
                for q in range(dim):
                    S[a, q] = S[a, q] - Y[v, q]
                    S[target, q] = S[target, q] + Y[v, q]
                size[a] = size[a] - 1
                size[target] = size[target] + 1
                comp[v] = target
                moved += 1
            moves += moved
            if moved == 0:
                break
    return comp_arr, k, moves


cdef extern from *:
    """
    #include <queue>
    #include <vector>
    struct SpCand { double d; long long u, v, vu, vv; };
    struct SpCandGreater {
        bool operator()(const SpCand &a, const SpCand &b) const {
            if (a.d != b.d) return a.d > b.d;
            if (a.u != b.u) return a.u > b.u;
            if (a.v != b.v) return a.v > b.v;
            if (a.vu != b.vu) return a.vu > b.vu;
            return a.vv > b.vv;
        }
    };
    typedef std::priority_queue<SpCand, std::vector<SpCand>, SpCandGreater> SpCandHeap;
    """
    ctypedef struct _Cand "SpCand":
        double d
        long long u
        long long v
        long long vu
        long long vv

    cdef cppclass _CandHeap "SpCandHeap":
        _CandHeap() except +
        bint empty() nogil
        _Cand& top() nogil
        void push(_Cand&) nogil
        void pop() nogil


cdef inline double _merge_delta(double[::1] size, double[:, ::1] sums, long long u, long long v,
                                double w_uv, Py_ssize_t dim) noexcept nogil:
    cdef double nu = size[u]
    cdef double nv = size[v]
    cdef double sq = 0.0
    cdef double t
    cdef Py_ssize_t q
    for q in range(dim):
        t = sums[u, q] / nu - sums[v, q] / nv
        sq += t * t
    return nu * nv / (nu + nv) * sq - w_uv


def greedy_merge(size_in, sums_in, const long long[::1] pair_u, const long long[::1] pair_v,
                 const double[::1] pair_w):
    cdef double[::1] size = np.array(size_in, dtype=np.float64)
    cdef double[:, ::1] sums = np.array(sums_in, dtype=np.float64, order="C")
    cdef Py_ssize_t k = size.shape[0]
    cdef Py_ssize_t dim = sums.shape[1]
    cdef Py_ssize_t m = pair_u.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] parent_arr = np.arange(k, dtype=np.int64)
    cdef long long[::1] parent = parent_arr
    cdef vector[long long] version
    cdef vector[unordered_map[long long, double]] adj
    cdef unordered_map[long long, double].iterator it
    cdef _CandHeap heap
    cdef _Cand c
    cdef Py_ssize_t i, q
    cdef long long u, v, x
    cdef double d, nt
    with nogil:
        version.resize(k, 0)
        adj.resize(k)
        for i in range(m):
            adj[pair_u[i]][pair_v[i]] = pair_w[i]
            adj[pair_v[i]][pair_u[i]] = pair_w[i]
        for i in range(m):
            d = _merge_delta(size, sums, pair_u[i], pair_v[i], pair_w[i], dim)
            if d < 0:
                c.d = d
                c.u = pair_u[i]
                c.v = pair_v[i]
                c.vu = 0
                c.vv = 0
                heap.push(c)
        while not heap.empty():
            c = heap.top()
            heap.pop()
            u = c.u
            v = c.v
            if version[u] != c.vu or version[v] != c.vv or parent[u] != u or parent[v] != v:
                continue
            size[u] += size[v]
            for q in range(dim):
                sums[u, q] += sums[v, q]
            parent[v] = u
            version[u] += 1
            it = adj[v].begin()
            while it != adj[v].end():
                x = deref(it).first
                if x != u:
                    if adj[u].count(x):
                        nt = adj[u][x] + deref(it).second
                    else:
                        nt = 0.0 + deref(it).second
                    adj[u][x] = nt
                    adj[x][u] = nt
                    adj[x].erase(v)
                inc(it)
            adj[u].erase(v)
            adj[v].clear()
            it = adj[u].begin()
            while it != adj[u].end():
                x = deref(it).first
                d = _merge_delta(size, sums, u, x, deref(it).second, dim)
                if d < 0:
                    c.d = d
                    if u < x:
                        c.u = u
                        c.v = x
                        c.vu = version[u]
                        c.vv = version[x]
                    else:
                        c.u = x
                        c.v = u
                        c.vu = version[x]
                        c.vv = version[u]
                    heap.push(c)
                inc(it)
    return parent_arr
