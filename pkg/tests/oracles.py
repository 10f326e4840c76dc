"""Independent slow reference implementations used as test oracles.

Nothing here imports the code under test except plain data containers.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter, deque

import numpy as np


# -- neighbors -------------------------------------------------------------

def knn_bruteforce(pos, k):
    """k nearest neighbors by full distance table; ties toward the smaller index."""
    pos = np.asarray(pos, dtype=np.float64)
    n = len(pos)
    out = []
    for i in range(n):
        d = [(float(np.sum((pos[i] - pos[j]) ** 2)), j) for j in range(n) if j != i]
        d.sort()
        out.append([j for _, j in d[:k]])
    return np.array(out, dtype=np.int64).reshape(n, k)


def adjacency_bruteforce(pos, k):
    nb = knn_bruteforce(pos, k)
    edges = set()
    for i, row in enumerate(nb):
        for j in row:
            edges.add((min(i, int(j)), max(i, int(j))))
    return sorted(edges)


# -- partitions ------------------------------------------------------------

def set_partitions(n):
    """Every partition of range(n) as a restricted growth string."""
    if n == 0:
        yield []
        return
    a = [0] * n

    def rec(i, m):
        if i == n:
            yield list(a)
            return
        for v in range(m + 1):
            a[i] = v
            yield from rec(i + 1, m + 1 if v == m else m)

    yield from rec(1, 1)


def blocks_connected(labels, edges, n):
    adj = [[] for _ in range(n)]
    for i, j in edges:
        if labels[i] == labels[j]:
            adj[i].append(j)
            adj[j].append(i)
    seen = [False] * n
    blocks_seen = set()
    for s in range(n):
        if seen[s]:
            continue
        if labels[s] in blocks_seen:
            return False
        blocks_seen.add(labels[s])
        q = deque([s])
        seen[s] = True
        while q:
            u = q.popleft()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    q.append(v)
    return True


def partition_energy_naive(Y, edges, w, labels):
    Y = np.asarray(Y, dtype=np.float64)
    total = 0.0
    for b in set(labels):
        rows = Y[[i for i, l in enumerate(labels) if l == b]]
        total += float(np.sum((rows - rows.mean(axis=0)) ** 2))
    for (i, j), x in zip(edges, w):
        if labels[i] != labels[j]:
            total += float(x)
    return total


def gmp_bruteforce(Y, edges, w):
    """Minimum energy over all partitions into connected blocks."""
    n = len(Y)
    edges = [tuple(map(int, e)) for e in edges]
    best, best_labels = math.inf, None
    for labels in set_partitions(n):
        if not blocks_connected(labels, edges, n):
            continue
        e = partition_energy_naive(Y, edges, w, labels)
        if e < best:
            best, best_labels = e, labels
    return best, best_labels


def components_bruteforce(n, edges):
    """Component id per vertex, numbered by smallest member."""
    comp = [-1] * n
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    c = 0
    for s in range(n):
        if comp[s] >= 0:
            continue
        stack = [s]
        comp[s] = c
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if comp[v] < 0:
                    comp[v] = c
                    stack.append(v)
        c += 1
    return comp


# -- metrics ---------------------------------------------------------------

def ooa_bruteforce(assignment, labels):
    groups = {}
    for s, l in zip(assignment, labels):
        groups.setdefault(int(s), []).append(int(l))
    hit = 0
    for members in groups.values():
        cnt = Counter(members)
        top = max(cnt.values())
        mode = min(l for l, c in cnt.items() if c == top)
        hit += sum(1 for l in members if l == mode)
    return hit / len(labels)


def boundary_bruteforce(edges, assignment, objects):
    """(br, bp, |E_inter|, |E_hat|) straight from the set definitions."""
    edges = [tuple(map(int, e)) for e in edges]
    inter = {e for e in edges if objects[e[0]] != objects[e[1]]}
    touched = {v for e in inter for v in e}
    expanded = {e for e in edges if e[0] in touched or e[1] in touched}
    pred = {e for e in edges if assignment[e[0]] != assignment[e[1]]}
    hit = len(pred & expanded)
    br = hit / len(inter) if inter else None
    bp = hit / len(pred) if pred else None
    return br, bp, len(inter), len(pred)


# -- loss ------------------------------------------------------------------

def loss_naive(e, edges, objects, mu, delta):
    """Loss by an explicit loop; ``mu`` maps an edge tuple to its weight."""
    total, count = 0.0, 0
    for i, j in edges:
        if objects[i] < 0 or objects[j] < 0:
            continue
        count += 1
        d = math.sqrt(sum((a - b) ** 2 for a, b in zip(e[i], e[j])))
        if objects[i] == objects[j]:
            total += delta * (math.sqrt(d * d / delta**2 + 1) - 1)
        else:
            total += mu[(i, j)] * max(1 - d, 0)
    return total / count if count else 0.0


def cross_partition_weights_naive(edges, superpoints, objects, mu):
    """Per inter-edge weight by enumerating cross components explicitly."""
    n = len(objects)
    inner = [(i, j) for i, j in edges
             if objects[i] >= 0 and objects[i] == objects[j] and superpoints[i] == superpoints[j]]
    comp = components_bruteforce(n, inner)
    size = Counter(comp[v] for v in range(n) if objects[v] >= 0)
    groups = {}
    for i, j in edges:
        if objects[i] >= 0 and objects[j] >= 0 and objects[i] != objects[j]:
            groups.setdefault(frozenset((comp[i], comp[j])), []).append((i, j))
    out = {}
    for key, members in groups.items():
        u, v = tuple(key)
        for e in members:
            out[e] = mu * min(size[u], size[v]) / len(members)
    return out


# -- derivatives -----------------------------------------------------------

def central_difference(f, x, h=1e-6):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=1e-6):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))) if a.size else 0.0


def random_graph(rng, n, p=None):
    pairs = list(itertools.combinations(range(n), 2))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    m = int(rng.integers(0, len(pairs) + 1)) if p is None else None
    if p is None:
        sel = rng.choice(len(pairs), size=m, replace=False)
    else:
        sel = np.flatnonzero(rng.random(len(pairs)) < p)
    return np.array([pairs[s] for s in sorted(sel)], dtype=np.int64).reshape(-1, 2)
