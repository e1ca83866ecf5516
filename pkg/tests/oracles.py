"""Reference implementations used as test oracles.

They share no code with the package: plain Python loops and dicts keyed by
``(row, col)``, so a bug in the library cannot hide in its own oracle.
"""

from collections import deque
import math

import numpy as np


def random_entries(rng, m, n, density, kind="int"):
    """``{(i, j): value}`` with each position present with probability ``density``."""
    mask = rng.random((m, n)) < density
    out = {}
    for i, j in zip(*np.nonzero(mask)):
        if kind == "int":
            v = int(rng.integers(-9, 10))
        elif kind == "bool":
            v = bool(rng.integers(0, 2))
        elif kind == "pos":
            v = float(rng.integers(1, 20))
        else:
            v = float(rng.standard_normal())
        out[(int(i), int(j))] = v
    return out


def entries_to_arrays(entries, dtype):
    keys = sorted(entries, key=lambda rc: (rc[1], rc[0]))
    rows = np.array([k[0] for k in keys], dtype=np.int64)
    cols = np.array([k[1] for k in keys], dtype=np.int64)
    vals = np.array([entries[k] for k in keys], dtype=dtype)
    return rows, cols, vals


def semiring_product(a, b, add, mul):
    """Triple loop over stored entries; sums run in ascending inner index."""
    by_row = {}
    for (i, k), v in a.items():
        by_row.setdefault(i, []).append((k, v))
    b_by_row = {}
    for (k, j), v in b.items():
        b_by_row.setdefault(k, []).append((j, v))
    out = {}
    for i, row in by_row.items():
        for k, av in sorted(row):
            for j, bv in b_by_row.get(k, []):
                p = mul(av, bv)
                out[(i, j)] = p if (i, j) not in out else add(out[(i, j)], p)
    return out


def spmv(a, x, add, mul):
    """``{row: value}`` for rows reached by some product."""
    out = {}
    for (i, j), v in sorted(a.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        if j in x:
            p = mul(v, x[j])
            out[i] = p if i not in out else add(out[i], p)
    return out


def union_find_labels(n, edges):
    parent = list(range(n))

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)
    smallest = {}
    for v in range(n):
        r = find(v)
        smallest[r] = min(smallest.get(r, v), v)
    return [smallest[find(v)] for v in range(n)]


def queue_bfs(n, edges, root):
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
    level = [-1] * n
    level[root] = 0
    q = deque([root])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if level[v] < 0:
                level[v] = level[u] + 1
                q.append(v)
    return level


def dense_pagerank(W, damping=0.85, iters=1000, tol=1e-15):
    """Power iteration on a dense weight matrix with ``W[u, v]`` an edge u -> v."""
    n = W.shape[0]
    out = W.sum(axis=1)
    x = np.full(n, 1.0 / n)
    for _ in range(iters):
        new = np.full(n, (1.0 - damping) / n)
        for u in range(n):
            if out[u] == 0:
                new += damping * x[u] / n
            else:
                new += damping * x[u] * W[u] / out[u]
        if np.abs(new - x).sum() < tol:
            return new
        x = new
    return x


def dense_mcl(M, inflation, prune):
    E = M @ M
    E = np.where(E != 0, np.power(E, inflation), 0.0)
    E = np.where(E >= prune, E, 0.0)
    s = E.sum(axis=0)
    return E / np.where(s > 0, s, 1.0)


def parse_matrix_market(path):
    """Single-pass reader: ``(m, n, {(i, j): summed value})`` with 0-based keys."""
    with open(path) as f:
        banner = f.readline().split()
        field, symmetry = banner[3].lower(), banner[4].lower()
        line = f.readline()
        while line.startswith("%") or not line.strip():
            line = f.readline()
        m, n, nnz = map(int, line.split())
        out = {}
        count = 0
        for line in f:
            parts = line.split()
            if not parts or parts[0].startswith("%"):
                continue
            count += 1
            i, j = int(parts[0]) - 1, int(parts[1]) - 1
            v = 1.0 if field == "pattern" else (int(parts[2]) if field == "integer"
                                                else float(parts[2]))
            out[(i, j)] = out.get((i, j), 0) + v
            if symmetry == "symmetric" and i != j:
                out[(j, i)] = out.get((j, i), 0) + v
        assert count == nnz
    return m, n, out


def close(a, b, rel=1e-12):
    if isinstance(a, float) or isinstance(b, float):
        return math.isclose(a, b, rel_tol=rel, abs_tol=1e-300) or a == b
    return a == b
