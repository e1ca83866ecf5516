"""Collective kernels over distributed matrices and vectors.

All functions here are collective over the grid of their operands.  Each
accepts an optional :class:`KernelStats` that is filled with stage counts,
flops, output size and the bytes moved per collective kind.
"""

from __future__ import annotations

import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .comm import Grid2D
from .distobj import (DistDenseMat, DistDenseVec, DistSparseMat2D, DistSparseMat3D,
                      DistSparseVec, VectorLayout, relayout_3d, split_starts)
from .errors import BudgetError, DimError, ShapeError
from .kernels import (estimate_flops, local_spgemm, local_spmspv, spmm_rows,
                      spmv_touched, symbolic_nnz)
from .localmat import (DcscMatrix, LocalSparseVec, _as_values, canonicalize,
                       from_canonical)
from .semiring import Semiring

__all__ = [
    "KernelStats",
    "measure",
    "BatchPlan",
    "plan_batches",
    "even_batches",
    "summa2d_spgemm",
    "ca3d_spgemm",
    "batched_spgemm",
    "dist_spmv",
    "dist_spmspv",
    "dist_spmm",
    "vec_assign",
    "vec_extract",
    "vec_assign_extract",
]


@dataclass
class KernelStats:
    """Per-call record of one rank's view of a distributed kernel."""

    phase: str = ""
    stages: int = 0
    flops: int = 0
    nnz_out: int = 0
    seconds: float = 0.0
    bytes_by_collective: dict = field(default_factory=dict)
    calls_by_collective: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "phase": self.phase,
            "seconds": self.seconds,
            "bytes_by_collective": dict(self.bytes_by_collective),
            "flops": self.flops,
            "nnz_out": self.nnz_out,
            "stages": self.stages,
        }


@contextmanager
def measure(comm, stats: Optional[KernelStats], phase: str):
    """Add the time and per-collective traffic of the block to ``stats``."""
    if stats is None:
        yield
        return
    before = comm.counters.snapshot()
    t0 = time.perf_counter()
    yield
    stats.phase = stats.phase or phase
    stats.seconds += time.perf_counter() - t0
    for key, entry in comm.counters.snapshot().items():
        old = before.get(key)
        kind = key[1]
        db = entry.bytes - (old.bytes if old else 0)
        dc = entry.calls - (old.calls if old else 0)
        if dc:
            stats.bytes_by_collective[kind] = stats.bytes_by_collective.get(kind, 0) + db
            stats.calls_by_collective[kind] = stats.calls_by_collective.get(kind, 0) + dc


def _check_dims(cond, msg):
    if not cond:
        raise DimError(msg)


def _merge_blocks(blocks, sr: Semiring, nrows, ncols):
    """Merge per-stage partial products once; equal keys fold in stage order."""
    rows = [b.rowids.astype(np.int64) for b in blocks]
    cols = [b.col_indices() for b in blocks]
    vals = [b.vals for b in blocks]
    if not blocks:
        return from_canonical(DcscMatrix, np.empty(0, np.int64), np.empty(0, np.int64),
                              np.empty(0, dtype=sr.dtype), nrows, ncols)
    r, c, v = canonicalize(np.concatenate(rows), np.concatenate(cols),
                           _as_values(np.concatenate(vals), sr.dtype), sr)
    return from_canonical(DcscMatrix, r, c, v, nrows, ncols)


# -- SpGEMM --------------------------------------------------------------------


def summa2d_spgemm(A: DistSparseMat2D, B: DistSparseMat2D, sr: Semiring,
                   local_alg: str = "hybrid", threads: int = 1,
                   stats: Optional[KernelStats] = None) -> DistSparseMat2D:
    """Sparse SUMMA on a square grid: ``sqrt(p)`` broadcast stages.

    At stage ``k`` grid column ``k`` broadcasts its A blocks along grid rows
    and grid row ``k`` broadcasts its B blocks along grid columns.  Stage
    products are kept separately and merged once at the end.
    """
    grid = A.grid
    if B.grid.comm.members != grid.comm.members or (B.grid.pr, B.grid.pc) != (grid.pr, grid.pc):
        raise ShapeError("operands live on different grids")
    if not grid.square:
        raise ShapeError(f"SUMMA needs a square grid, got {grid.pr}x{grid.pc}")
    _check_dims(A.n == B.m, f"inner dimensions differ: {A.shape} times {B.shape}")
    _check_dims(A.col_part == B.row_part, "inner block partitions of A and B differ")
    partials = []
    flops = 0
    with measure(grid.comm, stats, "spgemm"):
        for k in range(grid.pr):
            a_blk = grid.row_comm.bcast(A.local if grid.mycol == k else None, root=k)
            b_blk = grid.col_comm.bcast(B.local if grid.myrow == k else None, root=k)
            flops += estimate_flops(a_blk, b_blk).total_flops
            partials.append(local_spgemm(a_blk, b_blk, sr, local_alg, threads,
                                         out_format=DcscMatrix))
        local = _merge_blocks(partials, sr, A.local.nrows, B.local.ncols)
    if stats is not None:
        stats.stages += grid.pr
        stats.flops += flops
        stats.nnz_out += local.nnz
    return DistSparseMat2D(grid, A.m, B.n, local, A.row_part, B.col_part)


def ca3d_spgemm(A3: DistSparseMat3D, B3: DistSparseMat3D, sr: Semiring,
                local_alg: str = "hybrid", threads: int = 1,
                stats: Optional[KernelStats] = None) -> DistSparseMat3D:
    """3D SpGEMM: SUMMA inside every layer, then a fiber exchange of size ``c``.

    ``A3`` must be split by columns and ``B3`` by rows. When their inner
    cells differ (supergrid layouts of non-square 2D grids), ``B3`` is first
    moved onto ``A3``'s inner cells with one extra alltoallv over all ranks.
    The result is split by columns with ``A3``'s row cells and ``B3``'s
    column cells.
    """
    g3 = A3.grid3
    if B3.grid3.comm.members != g3.comm.members or B3.grid3.coords != g3.coords:
        raise ShapeError("operands live on different 3D grids")
    if A3.split_dim != "cols" or B3.split_dim != "rows":
        raise ShapeError("ca3d needs A split by columns and B split by rows")
    _check_dims(A3.n == B3.m, f"inner dimensions differ: {A3.shape} times {B3.shape}")
    if not np.array_equal(A3.col_cells, B3.row_cells):
        B3 = relayout_3d(B3, row_cells=A3.col_cells)
    if g3.c ** 3 > g3.size:
        warnings.warn(f"{g3.c} layers exceed the cube root of {g3.size} processes",
                      RuntimeWarning, stacklevel=2)
    cint = summa2d_spgemm(A3.layer, B3.layer, sr, local_alg, threads, stats)
    with measure(g3.comm, stats, "spgemm"):
        # Columns of this rank's C^int block, grouped by the layer that owns them.
        lg = g3.layer_grid
        segs = B3.layer.col_part.segments[lg.mycol]
        offsets = np.cumsum([0] + [e - s for s, e in segs])
        t = cint.local.to_triples()
        payloads = []
        for l in range(g3.c):
            sel = (t.cols >= offsets[l]) & (t.cols < offsets[l + 1])
            payloads.append((t.rows[sel], t.cols[sel] - offsets[l], t.vals[sel]))
        received = g3.fiber_comm.alltoallv(payloads)
        _, cp = DistSparseMat3D.partitions("cols", A3.m, B3.n, A3.row_cells,
                                           B3.col_cells, g3.layer)
        ncols = cp.block_size(lg.mycol)
        r, c, v = canonicalize(np.concatenate([p[0] for p in received]).astype(np.int64),
                               np.concatenate([p[1] for p in received]).astype(np.int64),
                               _as_values(np.concatenate([p[2] for p in received]),
                                          sr.dtype), sr)
        local = from_canonical(DcscMatrix, r, c, v, cint.local.nrows, ncols)
    if stats is not None:
        stats.nnz_out = local.nnz
    layer = DistSparseMat2D(lg, A3.m, B3.n, local, A3.layer.row_part, cp)
    return DistSparseMat3D(g3, "cols", A3.m, B3.n, A3.row_cells, B3.col_cells, layer)


# -- batching ----------------------------------------------------------------


@dataclass
class BatchPlan:
    """Column ranges of B processed one batch at a time."""

    ranges: list
    est_bytes: list = field(default_factory=list)

    @property
    def b(self) -> int:
        return len(self.ranges)

    def __post_init__(self):
        if not self.ranges:
            raise ValueError("a batch plan needs at least one range")
        for (lo, hi), (lo2, _) in zip(self.ranges, self.ranges[1:]):
            if hi != lo2:
                raise ValueError("batch ranges must be contiguous")


def column_bytes(col_nnz, dtype) -> np.ndarray:
    """Estimated DCSC bytes per output column: row id, value, and column slot."""
    col_nnz = np.asarray(col_nnz, dtype=np.int64)
    per_entry = 4 + np.dtype(dtype).itemsize
    return col_nnz * per_entry + np.where(col_nnz > 0, 12, 0)


def plan_batches(col_bytes, budget: int) -> BatchPlan:
    """Greedy maximal column ranges whose estimated output fits ``budget``."""
    col_bytes = np.asarray(col_bytes, dtype=np.int64)
    if budget <= 0:
        raise BudgetError(f"budget must be positive, got {budget}")
    if len(col_bytes) and col_bytes.max() > budget:
        raise BudgetError(f"budget {budget} is below the largest single column "
                          f"output estimate {int(col_bytes.max())}")
    ranges, est = [], []
    lo, acc = 0, 0
    for j, w in enumerate(col_bytes.tolist()):
        if acc + w > budget:
            ranges.append((lo, j))
            est.append(acc)
            lo, acc = j, 0
        acc += w
    ranges.append((lo, len(col_bytes)))
    est.append(acc)
    return BatchPlan(ranges, est)


def even_batches(ncols: int, b: int, col_bytes=None) -> BatchPlan:
    if b < 1:
        raise ValueError("batch count must be at least 1")
    bounds = split_starts(ncols, b).tolist()
    ranges = list(zip(bounds[:-1], bounds[1:]))
    est = [int(np.sum(col_bytes[lo:hi])) for lo, hi in ranges] if col_bytes is not None else []
    return BatchPlan(ranges, est)


def _column_slab_local(b, lo, hi):
    """Keep only columns in ``[lo, hi)``, shape unchanged."""
    cols = b.col_indices()
    keep = (cols >= lo) & (cols < hi)
    return from_canonical(type(b), b.rowids[keep], cols[keep], b.vals[keep],
                          b.nrows, b.ncols, b.widths)


def _column_slab_dist(B: DistSparseMat2D, lo, hi):
    gcols = B.col_part.to_global(B.grid.mycol, np.arange(B.local.ncols))
    inside = np.flatnonzero((gcols >= lo) & (gcols < hi))
    if len(inside):
        l_lo, l_hi = int(inside[0]), int(inside[-1]) + 1
    else:
        l_lo = l_hi = 0
    return B.with_local(_column_slab_local(B.local, l_lo, l_hi))


def symbolic_pattern(a, b) -> dict:
    """``{column: set of rows}`` of the structural product ``a b``."""
    acols = a.column_lists
    out = {}
    for j, (brows, _) in b.column_lists.items():
        rows = set()
        for k in brows:
            col = acols.get(k)
            if col is not None:
                rows.update(col[0])
        if rows:
            out[j] = rows
    return out


def _dist_column_nnz(A: DistSparseMat2D, B: DistSparseMat2D):
    """Exact global per-column output nnz of ``A B`` (collective symbolic pass)."""
    grid = A.grid
    union: dict = {}
    for k in range(grid.pr):
        a_blk = grid.row_comm.bcast(A.local if grid.mycol == k else None, root=k)
        b_blk = grid.col_comm.bcast(B.local if grid.myrow == k else None, root=k)
        for j, rows in symbolic_pattern(a_blk, b_blk).items():
            union.setdefault(j, set()).update(rows)
    local = np.zeros(B.local.ncols, dtype=np.int64)
    for j, rows in union.items():
        local[j] = len(rows)
    block = grid.col_comm.allreduce(local)
    pieces = grid.row_comm.allgatherv(block)
    out = np.zeros(B.n, dtype=np.int64)
    for J, piece in enumerate(pieces):
        out[B.col_part.indices(J)] = piece
    return out


def batched_spgemm(A, B, sr: Semiring, plan: Union[BatchPlan, int, None] = None,
                   budget: Optional[int] = None, consumer: Optional[Callable] = None,
                   local_alg: str = "hybrid", threads: int = 1,
                   stats: Optional[KernelStats] = None) -> list:
    """``A B`` computed one column range of ``B`` at a time.

    ``plan`` is a :class:`BatchPlan` or a batch count; with ``budget`` (bytes
    for the whole batch output) the plan comes from exact symbolic
    per-column output sizes.  ``consumer(r, slab)`` is called once per batch
    in range order and its return values are collected; without a consumer
    the slabs themselves are returned.  Works on local matrices and on
    :class:`DistSparseMat2D` operands (slabs are then distributed too).
    """
    distributed = isinstance(A, DistSparseMat2D)
    ncols = B.n if distributed else B.ncols
    if plan is None and budget is None:
        plan = 1
    if isinstance(plan, BatchPlan):
        if plan.ranges[0][0] != 0 or plan.ranges[-1][1] != ncols:
            raise ValueError("batch plan does not cover the columns of B")
    else:
        if distributed:
            col_nnz = _dist_column_nnz(A, B)
        else:
            _check_dims(A.ncols == B.nrows, f"inner dimensions differ: {A.shape} times {B.shape}")
            col_nnz = symbolic_nnz(A, B)
        cb = column_bytes(col_nnz, sr.dtype)
        plan = plan_batches(cb, budget) if budget is not None else even_batches(ncols, plan, cb)
    results = []
    for r, (lo, hi) in enumerate(plan.ranges):
        if distributed:
            slab = summa2d_spgemm(A, _column_slab_dist(B, lo, hi), sr, local_alg, threads,
                                  stats)
        else:
            slab = local_spgemm(A, _column_slab_local(B, lo, hi), sr, local_alg, threads)
        results.append(consumer(r, slab) if consumer is not None else slab)
    return results


# -- vector kernels --------------------------------------------------------------


def _check_vector_operand(A: DistSparseMat2D, grid: Grid2D, n: int):
    if grid.comm.members != A.grid.comm.members or (grid.pr, grid.pc) != (A.grid.pr, A.grid.pc):
        raise ShapeError("matrix and vector live on different grids")
    _check_dims(A.n == n, f"matrix has {A.n} columns, vector length {n}")
    if not A.is_regular():
        raise ShapeError("vector kernels expect the default 2D block layout")


def _gather_segment(A: DistSparseMat2D, x_local, offset: int, n: int):
    """Collect the x entries matching this rank's column block.

    Step 1 sends each owned entry to the grid-row peer holding its column
    block; step 2 gathers those chunks within the grid column.  Chunks are
    ``(global start, values)``; returns ``[(block offset, values), ...]``.
    """
    grid = A.grid
    cb = split_starts(n, grid.pc)
    lo, hi = offset, offset + len(x_local)
    sends = []
    for J in range(grid.pc):
        s, e = max(lo, int(cb[J])), min(hi, int(cb[J + 1]))
        sends.append((s, x_local[s - lo:e - lo]) if s < e else (s, x_local[:0]))
    received = grid.row_comm.alltoallv(sends)
    mine = [chunk for chunk in received if len(chunk[1])]
    gathered = grid.col_comm.allgatherv(mine)
    start = int(cb[grid.mycol])
    return [(g - start, vals) for part in gathered for g, vals in part]


def _scatter_rows(A: DistSparseMat2D, m: int, make_payload):
    """Send slices of this rank's row block to the grid-row owners of ``y``.

    ``make_payload(lo, hi)`` builds the message for block rows ``[lo, hi)``.
    Returns the received messages in source column order and the local range.
    """
    grid = A.grid
    lay = VectorLayout(m, grid.pr, grid.pc)
    row_start = lay.starts[grid.myrow * grid.pc]
    payloads = []
    for J in range(grid.pc):
        lo, hi = lay.local_range(grid.rank_of(grid.myrow, J))
        payloads.append(make_payload(lo - row_start, hi - row_start))
    return grid.row_comm.alltoallv(payloads)


def dist_spmv(A: DistSparseMat2D, x: DistDenseVec, sr: Semiring, part: str = "row",
              threads: int = 1, stats: Optional[KernelStats] = None) -> DistDenseVec:
    """``y = A x`` with ``y`` in the standard vector layout of length ``A.m``."""
    _check_vector_operand(A, x.grid, x.n)
    grid = A.grid
    with measure(grid.comm, stats, "spmv"):
        chunks = _gather_segment(A, x.local, x.offset, x.n)
        seg = [sr.zero] * A.local.ncols
        for off, vals in chunks:
            seg[off:off + len(vals)] = vals.tolist()
        touched = spmv_touched(A.local, seg, sr, part, threads)

        def payload(lo, hi):
            idx = [k - lo for k in range(lo, hi) if touched[k] is not None]
            return (np.asarray(idx, dtype=np.int64),
                    _as_values([touched[lo + k] for k in idx], sr.dtype))

        received = _scatter_rows(A, A.m, payload)
        n_out = VectorLayout(A.m, grid.pr, grid.pc).local_length(grid.comm.rank)
        acc = [None] * n_out
        add = sr.add
        for idx, vals in received:
            for k, v in zip(idx.tolist(), vals.tolist()):
                cur = acc[k]
                acc[k] = v if cur is None else add(cur, v)
        y = _as_values([sr.zero if v is None else v for v in acc], sr.dtype)
    if stats is not None:
        stats.flops += A.local.nnz
        stats.nnz_out += n_out
    return DistDenseVec(grid, A.m, y)


def dist_spmspv(A: DistSparseMat2D, x: DistSparseVec, sr: Semiring, alg: str = "spa",
                threads: int = 1, stats: Optional[KernelStats] = None) -> DistSparseVec:
    """Sparse ``y = A x``; only nonzero entries of ``x`` travel."""
    _check_vector_operand(A, x.grid, x.n)
    grid = A.grid
    with measure(grid.comm, stats, "spmspv"):
        cb = split_starts(x.n, grid.pc)
        gidx = x.local.idx.astype(np.int64) + x.offset
        owner = np.searchsorted(cb, gidx, side="right") - 1
        sends = [(gidx[owner == J], x.local.vals[owner == J]) for J in range(grid.pc)]
        received = grid.row_comm.alltoallv(sends)
        idx = np.concatenate([r[0] for r in received])
        vals = np.concatenate([r[1] for r in received])
        gathered = grid.col_comm.allgatherv((idx, vals))
        start = int(cb[grid.mycol])
        sidx = np.concatenate([g[0] for g in gathered]) - start
        svals = np.concatenate([g[1] for g in gathered])
        order = np.argsort(sidx, kind="stable")
        seg = LocalSparseVec(sidx[order], svals[order], A.local.ncols)
        part = local_spmspv(A.local, seg, sr, alg, threads)
        pidx = part.idx.astype(np.int64)

        def payload(lo, hi):
            s, e = np.searchsorted(pidx, [lo, hi])
            return pidx[s:e] - lo, part.vals[s:e]

        received = _scatter_rows(A, A.m, payload)
        ridx = np.concatenate([r[0] for r in received])
        rvals = _as_values(np.concatenate([r[1] for r in received]), sr.dtype)
        zeros = np.zeros(len(ridx), dtype=np.int64)
        ridx, _, rvals = canonicalize(ridx, zeros, rvals, sr)
        n_out = VectorLayout(A.m, grid.pr, grid.pc).local_length(grid.comm.rank)
    if stats is not None:
        stats.nnz_out += len(ridx)
    return DistSparseVec(grid, A.m, LocalSparseVec(ridx, rvals, n_out))


def dist_spmm(A: DistSparseMat2D, X: DistDenseMat, sr: Semiring, threads: int = 1,
              stats: Optional[KernelStats] = None) -> DistDenseMat:
    """``Y = A X`` for a row-split dense ``X``; only dense blocks travel."""
    if X.layout != "rowsplit":
        raise ShapeError("dist_spmm expects a row-split dense operand")
    _check_vector_operand(A, X.grid, X.m)
    grid = A.grid
    k = X.k
    with measure(grid.comm, stats, "spmm"):
        lay = VectorLayout(X.m, grid.pr, grid.pc)
        chunks = _gather_segment(A, X.local, lay.local_range(grid.comm.rank)[0], X.m)
        seg = np.full((A.local.ncols, k), sr.zero, dtype=X.local.dtype)
        for off, block in chunks:
            seg[off:off + len(block)] = block
        rows = spmm_rows(A.local, seg, sr, threads)
        keys = np.array(sorted(rows), dtype=np.int64)

        def payload(lo, hi):
            s, e = np.searchsorted(keys, [lo, hi])
            sel = keys[s:e]
            block = np.empty((len(sel), k), dtype=sr.dtype)
            for t, r in enumerate(sel.tolist()):
                block[t] = rows[r]
            return sel - lo, block

        received = _scatter_rows(A, A.m, payload)
        n_out = VectorLayout(A.m, grid.pr, grid.pc).local_length(grid.comm.rank)
        acc = [None] * n_out
        add = sr.add
        for idx, block in received:
            for r, row in zip(idx.tolist(), block.tolist()):
                cur = acc[r]
                acc[r] = row if cur is None else [add(p, q) for p, q in zip(cur, row)]
        Y = np.full((n_out, k), sr.zero, dtype=sr.dtype)
        for r, row in enumerate(acc):
            if row is not None:
                Y[r] = row
    return DistDenseMat(grid, A.m, k, Y, "rowsplit")


# -- assign / extract ------------------------------------------------------------


def _check_indices(ind: DistDenseVec, n: int):
    bad = (ind.local < 0) | (ind.local >= n)
    if np.any(bad):
        raise IndexError(f"index {int(ind.local[bad][0])} out of range for length {n}")


def _same_grid(a, b):
    if a.grid.comm.members != b.grid.comm.members or \
            (a.grid.pr, a.grid.pc) != (b.grid.pr, b.grid.pc):
        raise ShapeError("vectors live on different grids")


def vec_assign(y: DistDenseVec, ind: DistDenseVec, x: DistDenseVec,
               accum: Optional[Callable] = None) -> DistDenseVec:
    """``y(ind(k)) <- x(k)`` in one alltoallv over all ranks.

    Duplicate targets resolve by last writer in (source rank, position)
    order, or are combined left to right with ``accum`` when given.
    """
    _same_grid(y, ind)
    _same_grid(y, x)
    if ind.n != x.n:
        raise DimError(f"index vector length {ind.n} differs from value length {x.n}")
    _check_indices(ind, y.n)
    comm = y.grid.comm
    dest, off = y.layout.owner(ind.local)
    order = np.argsort(dest, kind="stable")
    bounds = np.searchsorted(dest[order], np.arange(comm.size + 1))
    payloads = [(off[order[bounds[r]:bounds[r + 1]]], x.local[order[bounds[r]:bounds[r + 1]]])
                for r in range(comm.size)]
    received = comm.alltoallv(payloads)
    out = y.local.copy()
    if accum is None:
        for o, v in received:
            out[o] = v  # numpy fancy assignment keeps the last duplicate
    else:
        for o, v in received:
            for k, val in zip(o.tolist(), v.tolist()):
                out[k] = accum(out[k], val)
    return y.with_local(out)


def vec_extract(x: DistDenseVec, ind: DistDenseVec) -> DistDenseVec:
    """``r(k) <- x(ind(k))``; ``r`` has the layout of ``ind``.

    Needs a request and a reply alltoallv.
    """
    _same_grid(x, ind)
    _check_indices(ind, x.n)
    comm = x.grid.comm
    src, off = x.layout.owner(ind.local)
    order = np.argsort(src, kind="stable")
    bounds = np.searchsorted(src[order], np.arange(comm.size + 1))
    requests = comm.alltoallv([off[order[bounds[r]:bounds[r + 1]]]
                               for r in range(comm.size)])
    replies = comm.alltoallv([x.local[req] for req in requests])
    out = np.empty(len(ind.local), dtype=x.local.dtype)
    for r in range(comm.size):
        out[order[bounds[r]:bounds[r + 1]]] = replies[r]
    return DistDenseVec(ind.grid, ind.n, out)


def vec_assign_extract(mode: str, y: Optional[DistDenseVec], ind: DistDenseVec,
                       x: DistDenseVec, accum: Optional[Callable] = None) -> DistDenseVec:
    if mode == "assign":
        return vec_assign(y, ind, x, accum)
    if mode == "extract":
        return vec_extract(x, ind)
    raise ValueError(f"mode must be 'assign' or 'extract', not {mode!r}")
