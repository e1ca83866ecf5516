"""Graph algorithms composed from the distributed kernels.

Adjacency convention: ``A[u, v] != 0`` is an edge ``u -> v``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .comm import Grid2D, grid_convert_2d_to_3d
from .distkernels import (ca3d_spgemm, dist_spmspv, dist_spmv, summa2d_spgemm,
                          vec_assign, vec_extract)
from .distobj import (DistDenseVec, DistSparseMat2D, DistSparseVec, dist_transpose,
                      distribute_triples, redistribute_2d, redistribute_3d)
from .errors import ShapeError, StochasticityError
from .localmat import LocalSparseVec, Triples, from_canonical
from .semiring import builtin_semiring

__all__ = [
    "RmatParams",
    "gen_rmat",
    "bfs",
    "CcResult",
    "fastsv_cc",
    "pagerank",
    "column_sums",
    "normalize_columns",
    "mcl_step",
    "RMAT_CHUNK",
]

#: Edges per independently seeded generation chunk.
RMAT_CHUNK = 1 << 16


@dataclass(frozen=True)
class RmatParams:
    scale: int
    edge_factor: int = 16
    a: float = 0.57
    b: float = 0.19
    c: float = 0.19
    d: float = 0.05
    seed: int = 1

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be at least 1")
        if abs(self.a + self.b + self.c + self.d - 1.0) > 1e-12:
            raise ValueError("quadrant probabilities must sum to 1")

    @property
    def n(self) -> int:
        return 1 << self.scale


def _rmat_chunk(params: RmatParams, k: int, count: int):
    key = np.array([params.seed & (2**64 - 1), k], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    u = np.zeros(count, dtype=np.int64)
    v = np.zeros(count, dtype=np.int64)
    ab, abc = params.a + params.b, params.a + params.b + params.c
    for level in range(params.scale):
        r = rng.random(count)
        down = r >= ab
        right = ((r >= params.a) & (r < ab)) | (r >= abc)
        bit = 1 << (params.scale - 1 - level)
        u += down * bit
        v += right * bit
    return u, v


def gen_rmat(params: RmatParams, grid: Grid2D) -> DistSparseMat2D:
    """Symmetric R-MAT graph without self loops, all values 1.0 (collective).

    Edges come in fixed-size chunks, each from its own counter-based stream
    keyed by ``(seed, chunk)``, so the graph does not depend on the grid.
    """
    comm = grid.comm
    n = params.n
    total = params.edge_factor * n
    nchunks = -(-total // RMAT_CHUNK)
    us, vs = [], []
    for k in range(comm.rank, nchunks, comm.size):
        count = min(RMAT_CHUNK, total - k * RMAT_CHUNK)
        u, v = _rmat_chunk(params, k, count)
        keep = u != v
        us += [u[keep], v[keep]]
        vs += [v[keep], u[keep]]
    rows = np.concatenate(us) if us else np.empty(0, dtype=np.int64)
    cols = np.concatenate(vs) if vs else np.empty(0, dtype=np.int64)
    t = Triples(rows, cols, np.ones(len(rows)), n, n)
    return distribute_triples(t, grid, lambda x, y: x)


def _require_square(A):
    if A.m != A.n:
        raise ShapeError(f"expected a square matrix, got {A.m}x{A.n}")


def _pattern(A: DistSparseMat2D) -> DistSparseMat2D:
    loc = A.local
    local = from_canonical(type(loc), loc.rowids, loc.col_indices(),
                           np.ones(loc.nnz, dtype=bool), loc.nrows, loc.ncols)
    return A.with_local(local)


def bfs(A: DistSparseMat2D, root: int, alg: str = "spa", threads: int = 1) -> DistDenseVec:
    """Hop distance from ``root`` along edges ``u -> v``; -1 when unreachable.

    Each step multiplies the frontier by ``A^T`` over (or, and) and drops
    the already visited vertices from the result.
    """
    _require_square(A)
    if not 0 <= root < A.n:
        raise IndexError(f"root {root} outside 0..{A.n - 1}")
    grid = A.grid
    sr = builtin_semiring("or_and_bool")
    At = _pattern(dist_transpose(A))
    levels = DistDenseVec.full(grid, A.n, -1, dtype=np.int64)
    frontier = DistSparseVec.from_global(
        grid, LocalSparseVec([root], np.array([True]), A.n))
    lo = levels.offset
    if 0 <= root - lo < len(levels.local):
        levels.local[root - lo] = 0
    depth = 0
    while frontier.nnz() > 0:
        depth += 1
        reached = dist_spmspv(At, frontier, sr, alg, threads)
        fresh = levels.local[reached.local.idx] == -1
        idx = reached.local.idx[fresh]
        levels.local[idx] = depth
        frontier = DistSparseVec(grid, A.n, LocalSparseVec(
            idx, reached.local.vals[fresh], reached.local.n))
    return levels


@dataclass
class CcResult:
    labels: DistDenseVec
    ncomponents: int
    iterations: int


def fastsv_cc(A: DistSparseMat2D, max_iters: Optional[int] = None,
              threads: int = 1, on_iteration: Optional[Callable] = None) -> CcResult:
    """Connected components of a symmetric pattern by min-label hooking.

    One iteration: grandparents ``gf = f(f)``; for every vertex the minimum
    grandparent among its neighbors (SpMV over (min, select-second)); that
    minimum is min-assigned to the vertex's parent and to the vertex; then
    ``f = f(f)`` is repeated until stable.  Stops when an iteration leaves
    ``f`` unchanged.  Labels end as the smallest vertex id of the component.
    ``on_iteration(k, f)`` is called after every iteration.
    """
    _require_square(A)
    grid = A.grid
    comm = grid.comm
    sr = builtin_semiring("min_select2nd_i64")
    f = DistDenseVec.iota(grid, A.n)
    iterations = 0
    while max_iters is None or iterations < max_iters:
        iterations += 1
        start = f.local.copy()
        gf = vec_extract(f, f)
        mngf = dist_spmv(A, gf, sr, threads=threads)
        f = vec_assign(f, f, mngf, accum=min)
        f = f.with_local(np.minimum(f.local, mngf.local))
        while True:
            ff = vec_extract(f, f)
            moved = comm.allreduce(bool(np.any(ff.local != f.local)), lambda a, b: a or b)
            f = ff
            if not moved:
                break
        if on_iteration is not None:
            on_iteration(iterations, f)
        if not comm.allreduce(bool(np.any(f.local != start)), lambda a, b: a or b):
            break
    roots = int(np.count_nonzero(f.local == f.global_indices()))
    return CcResult(f, comm.allreduce(roots), iterations)


def pagerank(A: DistSparseMat2D, damping: float = 0.85, tol: float = 1e-10,
             max_iters: int = 100, threads: int = 1,
             on_iteration: Optional[Callable] = None) -> DistDenseVec:
    """Power iteration ``x <- d M x + (1 - d) / n`` with ``M = A^T D^-1``.

    ``D`` holds the weighted out-degrees (row sums); rank held by vertices
    without out-edges is spread uniformly.  Stops when the L1 change drops
    below ``tol``.  ``on_iteration(k, x)`` sees every iterate.
    """
    _require_square(A)
    if not 0 < damping < 1:
        raise ValueError("damping must lie in (0, 1)")
    grid = A.grid
    comm = grid.comm
    sr = builtin_semiring("plus_times_f64")
    n = A.n
    if n == 0:
        return DistDenseVec.full(grid, 0, 0.0)
    ones = DistDenseVec.full(grid, n, 1.0)
    outdeg = dist_spmv(A, ones, sr, threads=threads).local
    At = dist_transpose(A)
    dangling = outdeg == 0
    safe = np.where(dangling, 1.0, outdeg)
    x = DistDenseVec.full(grid, n, 1.0 / n)
    for k in range(1, max_iters + 1):
        z = x.with_local(np.where(dangling, 0.0, x.local / safe))
        spill = comm.allreduce(float(x.local[dangling].sum()))
        y = dist_spmv(At, z, sr, threads=threads).local
        new = damping * (y + spill / n) + (1.0 - damping) / n
        delta = comm.allreduce(float(np.abs(new - x.local).sum()))
        x = x.with_local(new)
        if on_iteration is not None:
            on_iteration(k, x)
        if delta < tol:
            break
    return x


def column_sums(A: DistSparseMat2D) -> np.ndarray:
    """Sums of this rank's block columns over the whole matrix (collective)."""
    loc = A.local
    local = np.zeros(loc.ncols, dtype=np.float64)
    np.add.at(local, loc.col_indices(), loc.vals.astype(np.float64))
    return A.grid.col_comm.allreduce(local)


def normalize_columns(A: DistSparseMat2D, sums=None) -> DistSparseMat2D:
    """Divide every column by its sum; empty columns stay empty (collective)."""
    if sums is None:
        sums = column_sums(A)
    sums = np.where(sums > 0, sums, 1.0)
    loc = A.local
    cols = loc.col_indices()
    vals = loc.vals / sums[cols]
    return A.with_local(from_canonical(type(loc), loc.rowids, cols, vals,
                                       loc.nrows, loc.ncols))


def mcl_step(A: DistSparseMat2D, inflation: float = 2.0, prune: float = 1e-4,
             layers: int = 1, variant: str = "regular", alg: str = "hybrid",
             threads: int = 1, tol: float = 1e-9) -> DistSparseMat2D:
    """One Markov clustering step: expand, inflate, prune, renormalize.

    ``A`` must be column stochastic (empty columns are allowed and stay
    empty).  Expansion uses SUMMA, or the 3D algorithm when ``layers > 1``.
    """
    _require_square(A)
    if inflation <= 0:
        raise ValueError("inflation must be positive")
    sums = column_sums(A)
    present = np.zeros(A.local.ncols, dtype=bool)
    present[A.local.col_indices()] = True
    present = A.grid.col_comm.allreduce(present, np.logical_or)
    bad = present & (np.abs(sums - 1.0) > tol)
    if A.grid.comm.allreduce(bool(bad.any()), lambda a, b: a or b):
        raise StochasticityError("input columns do not sum to 1")
    sr = builtin_semiring("plus_times_f64")
    if layers > 1:
        g3 = grid_convert_2d_to_3d(A.grid, layers, variant)
        C3 = ca3d_spgemm(redistribute_3d(A, g3, "cols"), redistribute_3d(A, g3, "rows"),
                         sr, alg, threads)
        C = redistribute_2d(C3, A.grid)
    else:
        C = summa2d_spgemm(A, A, sr, alg, threads)
    loc = C.local
    vals = np.power(loc.vals, inflation)
    keep = vals >= prune
    C = C.with_local(from_canonical(type(loc), loc.rowids[keep], loc.col_indices()[keep],
                                    vals[keep], loc.nrows, loc.ncols))
    return normalize_columns(C)
