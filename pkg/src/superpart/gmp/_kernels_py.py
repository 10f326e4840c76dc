"""Reference implementations of the solver's inner loops, in plain Python.

These define the semantics that the compiled kernels reproduce bit for bit.
"""
from __future__ import annotations

import heapq

import numpy as np


def icm_sweeps(indptr, indices, w_csr, comp, Y, H0, H1, labels, max_sweeps):
    """Greedy two-label sweeps in vertex order; returns ``(labels, sweeps_done)``.

    Vertex ``v`` pays ``||Y[v] - H_l[comp[v]]||^2`` for label ``l`` plus the
    weight of every same-component neighbor holding the other label. Ties keep
    the current label.
    """
    indptr = indptr.tolist()
    indices = indices.tolist()
    w = w_csr.tolist()
    comp = comp.tolist()
    Yl = Y.tolist()
    H0l = H0.tolist()
    H1l = H1.tolist()
    lab = labels.astype(np.int8).tolist()
    n = len(comp)
    dim = Y.shape[1]
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        changed = 0
        for v in range(n):
            c = comp[v]
            y = Yl[v]
            h0 = H0l[c]
            h1 = H1l[c]
            cost0 = 0.0
            cost1 = 0.0
            for q in range(dim):
                t = y[q] - h0[q]
                cost0 += t * t
                t = y[q] - h1[q]
                cost1 += t * t
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                if comp[u] != c:
                    continue
                if lab[u] == 0:
                    cost1 += w[p]
                else:
                    cost0 += w[p]
            cur = lab[v]
            if cur == 0 and cost1 < cost0:
                lab[v] = 1
                changed += 1
            elif cur == 1 and cost0 < cost1:
                lab[v] = 0
                changed += 1
        if not changed:
            break
    return np.asarray(lab, dtype=np.int8), sweeps


def label_components(indptr, indices, key):
    """Connected components over edges joining vertices with equal ``key``.

    Component ids follow the smallest vertex of each component.
    """
    indptr = indptr.tolist()
    indices = indices.tolist()
    key = key.tolist()
    n = len(key)
    out = [-1] * n
    ncomp = 0
    stack = []
    for s in range(n):
        if out[s] >= 0:
            continue
        out[s] = ncomp
        stack.append(s)
        ks = key[s]
        while stack:
            v = stack.pop()
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                if out[u] < 0 and key[u] == ks:
                    out[u] = ncomp
                    stack.append(u)
        ncomp += 1
    return np.asarray(out, dtype=np.int64), ncomp


CONNECT_BUDGET = 64


def _still_connected(indptr, indices, comp, v, a, stamp, mark):
    """Whether component ``a`` minus vertex ``v`` stays connected.

    The search gives up (answering no) after expanding ``CONNECT_BUDGET``
    vertices, so a move whose detour is long is conservatively refused.
    """
    targets = []
    for p in range(indptr[v], indptr[v + 1]):
        u = indices[p]
        if comp[u] == a:
            targets.append(u)
    if len(targets) <= 1:
        return True
    stamp[v] = mark
    stamp[targets[0]] = mark
    stack = [targets[0]]
    reached = 1
    want = set(targets)
    expanded = 0
    while stack and reached < len(targets):
        if expanded == CONNECT_BUDGET:
            return False
        expanded += 1
        x = stack.pop()
        for p in range(indptr[x], indptr[x + 1]):
            u = indices[p]
            if comp[u] == a and stamp[u] != mark:
                stamp[u] = mark
                if u in want:
                    reached += 1
                stack.append(u)
    return reached >= len(targets)


def refine_moves(indptr, indices, w_csr, comp, Y, sums, size, k, max_sweeps, allow_new, frozen):
    """Single-vertex moves between adjacent components (or to a new singleton).

    A move is applied when it lowers the energy by more than 1e-12 and leaves
    the source component connected. Vertices with a nonzero ``frozen`` flag
    never move. ``sums``/``size`` must have room for ``len(comp)`` extra
    components. Returns ``(comp, k, moves)``.
    """
    frozen = frozen.tolist()
    indptr = indptr.tolist()
    indices = indices.tolist()
    w = w_csr.tolist()
    comp = comp.tolist()
    Yl = Y.tolist()
    S = sums.tolist()
    size = size.tolist()
    n = len(comp)
    dim = Y.shape[1]
    acc = [0.0] * len(size)
    seen = [False] * len(size)
    stamp = [0] * n
    mark = 0
    moves = 0
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        moved = 0
        for v in range(n):
            if frozen[v]:
                continue
            a = comp[v]
            na = size[a]
            y = Yl[v]
            touched = []
            for p in range(indptr[v], indptr[v + 1]):
                c = comp[indices[p]]
                if not seen[c]:
                    seen[c] = True
                    acc[c] = 0.0
                    touched.append(c)
                acc[c] += w[p]
            wa = acc[a] if seen[a] else 0.0
            dist = 0.0
            for q in range(dim):
                t = y[q] - S[a][q] / na
                dist += t * t
            rem = -(na / (na - 1.0)) * dist if na > 1 else 0.0
            best = -1e-12
            target = -1
            for c in touched:
                if c == a:
                    continue
                nc = size[c]
                dist = 0.0
                for q in range(dim):
                    t = y[q] - S[c][q] / nc
                    dist += t * t
                delta = rem + (nc / (nc + 1.0)) * dist + wa - acc[c]
                if delta < best or (delta == best and target >= 0 and c < target):
                    best = delta
                    target = c
            if allow_new and na > 1:
                delta = rem + wa
                if delta < best:
                    best = delta
                    target = k
            for c in touched:
                seen[c] = False
            if target < 0:
                continue
            if na > 1:
                mark += 1
                if not _still_connected(indptr, indices, comp, v, a, stamp, mark):
                    continue
            if target == k:
                k += 1
            for q in range(dim):
                S[a][q] -= y[q]
                S[target][q] += y[q]
            size[a] -= 1
            size[target] += 1
            comp[v] = target
            moved += 1
        moves += moved
        if not moved:
            break
    return np.asarray(comp, dtype=np.int64), k, moves


def _merge_delta(size, sums, u, v, w_uv, dim):
    nu = size[u]
    nv = size[v]
    su = sums[u]
    sv = sums[v]
    sq = 0.0
    for q in range(dim):
        t = su[q] / nu - sv[q] / nv
        sq += t * t
    return nu * nv / (nu + nv) * sq - w_uv


def greedy_merge(size, sums, pair_u, pair_v, pair_w):
    """Merge adjacent components while some merge lowers the energy.

    ``pair_*`` list every adjacent component pair once (``u < v``) with its
    boundary weight. The most negative merge is applied first, ties going to
    the smaller ``(u, v)``; the survivor keeps the smaller id. Returns the
    parent array, ``parent[x] == x`` for surviving components.
    """
    k = len(size)
    dim = sums.shape[1]
    size = size.tolist()
    sums = sums.tolist()
    adj = [dict() for _ in range(k)]
    for u, v, t in zip(pair_u.tolist(), pair_v.tolist(), pair_w.tolist()):
        adj[u][v] = t
        adj[v][u] = t
    parent = list(range(k))
    version = [0] * k
    heap = []
    for u, v, t in zip(pair_u.tolist(), pair_v.tolist(), pair_w.tolist()):
        d = _merge_delta(size, sums, u, v, t, dim)
        if d < 0:
            heap.append((d, u, v, 0, 0))
    heapq.heapify(heap)
    while heap:
        d, u, v, vu, vv = heapq.heappop(heap)
        if version[u] != vu or version[v] != vv or parent[u] != u or parent[v] != v:
            continue
        size[u] += size[v]
        su, sv = sums[u], sums[v]
        for q in range(dim):
            su[q] += sv[q]
        parent[v] = u
        version[u] += 1
        for x, t in adj[v].items():
            if x == u:
                continue
            nt = adj[u].get(x, 0.0) + t
            adj[u][x] = nt
            adj[x][u] = nt
            del adj[x][v]
        adj[u].pop(v, None)
        adj[v] = {}
        for x, t in adj[u].items():
            nd = _merge_delta(size, sums, u, x, t, dim)
            if nd < 0:
                if u < x:
                    heapq.heappush(heap, (nd, u, x, version[u], version[x]))
                else:
                    heapq.heappush(heap, (nd, x, u, version[x], version[u]))
    return np.asarray(parent, dtype=np.int64)
