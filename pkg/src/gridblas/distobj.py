"""Distributed matrices and vectors over 2D and 3D process grids.

Vector layout on a ``pr x pc`` grid: piece ``i`` has ``n // pr`` entries
(the last piece takes the remainder) and belongs to grid row ``i``; piece
``i`` is cut the same way into ``pc`` sub-pieces, sub-piece ``(i, j)`` being
owned by rank ``(i, j)`` alone.  Sparse matrix blocks reuse the same rule so
matrix row blocks line up with vector pieces.

A 3D matrix on ``c`` layers of ``q x q`` grids is described by two cell
tables ``row_cells`` and ``col_cells`` of shape ``(c, q, 2)`` holding
``[start, stop)`` index ranges.  Along the split dimension, layer ``l`` grid
block ``j`` covers exactly ``cells[l, j]``.  Along the other dimension grid
block ``j`` is the union of ``cells[:, j]`` and is the same in every layer.
"""

from __future__ import annotations

from functools import cached_property
from typing import Optional

import numpy as np

from .comm import Grid2D, Grid3D
from .errors import ShapeError
from .localmat import (DcscMatrix, LocalSparseVec, Triples, canonicalize,
                       from_canonical)

__all__ = [
    "split_lengths",
    "split_starts",
    "Partition",
    "VectorLayout",
    "vector_layout",
    "DistSparseMat2D",
    "DistSparseMat3D",
    "DistDenseVec",
    "DistSparseVec",
    "DistDenseMat",
    "distribute_triples",
    "random_permute",
    "permute_matrix",
    "permutation",
    "redistribute_3d",
    "relayout_3d",
    "redistribute_2d",
    "dist_transpose",
    "gather_matrix",
    "regular_cells",
    "supergrid_cells",
]


def split_lengths(n: int, parts: int) -> list[int]:
    """``parts - 1`` pieces of ``n // parts`` and the remainder in the last."""
    base = n // parts
    return [base] * (parts - 1) + [n - (parts - 1) * base]


def split_starts(n: int, parts: int) -> np.ndarray:
    out = np.zeros(parts + 1, dtype=np.int64)
    np.cumsum(split_lengths(n, parts), out=out[1:])
    return out


class Partition:
    """Assignment of ``0..n-1`` to blocks, each a sorted union of ranges."""

    def __init__(self, n: int, segments):
        self.n = int(n)
        self.segments = [[(int(s), int(e)) for s, e in block] for block in segments]
        starts, block, offset = [], [], []
        for b, segs in enumerate(self.segments):
            off = 0
            for s, e in segs:
                if e > s:
                    starts.append(s)
                    block.append(b)
                    offset.append(off)
                off += e - s
        order = np.argsort(starts, kind="stable")
        self._seg_start = np.asarray(starts, dtype=np.int64)[order]
        self._seg_block = np.asarray(block, dtype=np.int64)[order]
        self._seg_offset = np.asarray(offset, dtype=np.int64)[order]

    @classmethod
    def regular(cls, n: int, parts: int) -> "Partition":
        b = split_starts(n, parts)
        return cls(n, [[(b[k], b[k + 1])] for k in range(parts)])

    @property
    def nblocks(self) -> int:
        return len(self.segments)

    def block_size(self, b: int) -> int:
        return sum(e - s for s, e in self.segments[b])

    def indices(self, b: int) -> np.ndarray:
        segs = self.segments[b]
        if not segs:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([np.arange(s, e, dtype=np.int64) for s, e in segs])

    def locate(self, g):
        """Vectorized ``global -> (block, local offset)``."""
        g = np.asarray(g, dtype=np.int64)
        k = np.searchsorted(self._seg_start, g, side="right") - 1
        return self._seg_block[k], g - self._seg_start[k] + self._seg_offset[k]

    def to_global(self, b: int, local):
        local = np.asarray(local, dtype=np.int64)
        segs = self.segments[b]
        if len(segs) == 1:
            return local + segs[0][0]
        return self.indices(b)[local]

    def is_regular(self) -> bool:
        return self == Partition.regular(self.n, self.nblocks)

    def __eq__(self, other):
        return (isinstance(other, Partition) and self.n == other.n
                and self.segments == other.segments)

    __hash__ = None

    def __repr__(self):
        return f"Partition(n={self.n}, blocks={self.nblocks})"


class VectorLayout:
    """Piece lengths and owner/offset maps for a length-``n`` vector."""

    def __init__(self, n: int, pr: int, pc: int):
        self.n, self.pr, self.pc = int(n), pr, pc
        self.piece_lengths = split_lengths(self.n, pr)
        self.lengths = np.array([split_lengths(L, pc) for L in self.piece_lengths],
                                dtype=np.int64)
        flat = self.lengths.reshape(-1)
        self.starts = np.zeros(pr * pc + 1, dtype=np.int64)
        np.cumsum(flat, out=self.starts[1:])

    def local_range(self, rank: int) -> tuple[int, int]:
        return int(self.starts[rank]), int(self.starts[rank + 1])

    def local_length(self, rank: int) -> int:
        return int(self.starts[rank + 1] - self.starts[rank])

    def owner(self, g):
        """Vectorized ``global index -> (rank, local offset)``."""
        g = np.asarray(g, dtype=np.int64)
        r = np.searchsorted(self.starts, g, side="right") - 1
        r = np.minimum(r, self.pr * self.pc - 1)
        return r, g - self.starts[r]

    def to_global(self, rank: int, offset):
        return np.asarray(offset, dtype=np.int64) + self.starts[rank]


def vector_layout(n: int, grid_or_shape) -> VectorLayout:
    if isinstance(grid_or_shape, Grid2D):
        return VectorLayout(n, grid_or_shape.pr, grid_or_shape.pc)
    return VectorLayout(n, *grid_or_shape)


def _same_comm(a, b):
    return a.comm.members == b.comm.members


# -- dense and sparse vectors ------------------------------------------------


class DistDenseVec:
    """Dense vector; each rank stores its exclusive sub-piece in ``local``."""

    def __init__(self, grid: Grid2D, n: int, local: np.ndarray):
        self.grid = grid
        self.n = int(n)
        self.local = local
        if len(local) != self.layout.local_length(grid.comm.rank):
            raise ValueError("local piece length does not match the vector layout")

    @cached_property
    def layout(self) -> VectorLayout:
        return VectorLayout(self.n, self.grid.pr, self.grid.pc)

    @classmethod
    def from_global(cls, grid: Grid2D, values) -> "DistDenseVec":
        values = np.asarray(values)
        lay = VectorLayout(len(values), grid.pr, grid.pc)
        lo, hi = lay.local_range(grid.comm.rank)
        return cls(grid, len(values), values[lo:hi].copy())

    @classmethod
    def full(cls, grid: Grid2D, n: int, value, dtype=None) -> "DistDenseVec":
        lay = VectorLayout(n, grid.pr, grid.pc)
        return cls(grid, n, np.full(lay.local_length(grid.comm.rank), value, dtype=dtype))

    @classmethod
    def iota(cls, grid: Grid2D, n: int) -> "DistDenseVec":
        lay = VectorLayout(n, grid.pr, grid.pc)
        lo, hi = lay.local_range(grid.comm.rank)
        return cls(grid, n, np.arange(lo, hi, dtype=np.int64))

    @property
    def offset(self) -> int:
        return self.layout.local_range(self.grid.comm.rank)[0]

    def global_indices(self) -> np.ndarray:
        lo, hi = self.layout.local_range(self.grid.comm.rank)
        return np.arange(lo, hi, dtype=np.int64)

    def with_local(self, local) -> "DistDenseVec":
        return DistDenseVec(self.grid, self.n, local)

    def gather(self, root: Optional[int] = None):
        """Whole vector at ``root`` (``None`` elsewhere), or everywhere if ``root`` is None."""
        comm = self.grid.comm
        if root is None:
            parts = comm.allgatherv(self.local)
        else:
            parts = comm.gatherv(self.local, root)
            if parts is None:
                return None
        return np.concatenate(parts) if parts else self.local[:0]

    def __repr__(self):
        return f"DistDenseVec(n={self.n}, local={len(self.local)})"


class DistSparseVec:
    """Sparse vector in the dense-vector layout; ``local`` indexes the sub-piece."""

    def __init__(self, grid: Grid2D, n: int, local: LocalSparseVec):
        self.grid = grid
        self.n = int(n)
        self.local = local
        if local.n != self.layout.local_length(grid.comm.rank):
            raise ValueError("local piece length does not match the vector layout")

    @cached_property
    def layout(self) -> VectorLayout:
        return VectorLayout(self.n, self.grid.pr, self.grid.pc)

    @property
    def offset(self) -> int:
        return self.layout.local_range(self.grid.comm.rank)[0]

    @classmethod
    def from_global(cls, grid: Grid2D, x: LocalSparseVec) -> "DistSparseVec":
        lay = VectorLayout(x.n, grid.pr, grid.pc)
        lo, hi = lay.local_range(grid.comm.rank)
        s, e = np.searchsorted(x.idx, [lo, hi])
        return cls(grid, x.n, LocalSparseVec(x.idx[s:e] - lo, x.vals[s:e], hi - lo))

    @classmethod
    def empty(cls, grid: Grid2D, n: int, dtype=np.float64) -> "DistSparseVec":
        lay = VectorLayout(n, grid.pr, grid.pc)
        return cls(grid, n, LocalSparseVec.empty(lay.local_length(grid.comm.rank), dtype))

    def nnz(self) -> int:
        """Global number of stored entries (collective)."""
        return self.grid.comm.allreduce(self.local.nnz)

    def gather(self, root: Optional[int] = None) -> Optional[LocalSparseVec]:
        comm = self.grid.comm
        payload = (self.local.idx.astype(np.int64) + self.offset, self.local.vals)
        parts = comm.allgatherv(payload) if root is None else comm.gatherv(payload, root)
        if parts is None:
            return None
        idx = np.concatenate([p[0] for p in parts])
        vals = np.concatenate([p[1] for p in parts])
        return LocalSparseVec(idx, vals, self.n)

    def __repr__(self):
        return f"DistSparseVec(n={self.n}, local nnz={self.local.nnz})"


class DistDenseMat:
    """Dense matrix, row-major locally.

    ``rowsplit``: rows follow the vector layout of length ``m``, every rank
    holding all ``k`` columns of its rows.  ``block2d``: rows split over grid
    rows and columns over grid columns by the remainder rule.
    """

    def __init__(self, grid: Grid2D, m: int, k: int, local: np.ndarray,
                 layout: str = "rowsplit"):
        if layout not in ("rowsplit", "block2d"):
            raise ValueError(f"unknown dense layout {layout!r}")
        self.grid, self.m, self.k, self.local, self.layout = grid, int(m), int(k), local, layout
        if local.shape != self._local_shape():
            raise ValueError("local block shape does not match the layout")

    def _local_shape(self):
        g = self.grid
        if self.layout == "rowsplit":
            lay = VectorLayout(self.m, g.pr, g.pc)
            return (lay.local_length(g.comm.rank), self.k)
        return (split_lengths(self.m, g.pr)[g.myrow], split_lengths(self.k, g.pc)[g.mycol])

    def _local_slices(self):
        g = self.grid
        if self.layout == "rowsplit":
            lo, hi = VectorLayout(self.m, g.pr, g.pc).local_range(g.comm.rank)
            return slice(lo, hi), slice(0, self.k)
        rb, cb = split_starts(self.m, g.pr), split_starts(self.k, g.pc)
        return (slice(rb[g.myrow], rb[g.myrow + 1]), slice(cb[g.mycol], cb[g.mycol + 1]))

    @classmethod
    def from_global(cls, grid: Grid2D, X, layout: str = "rowsplit") -> "DistDenseMat":
        X = np.asarray(X)
        shell = cls.__new__(cls)
        shell.grid, shell.m, shell.k, shell.layout = grid, X.shape[0], X.shape[1], layout
        rs, cs = shell._local_slices()
        return cls(grid, X.shape[0], X.shape[1], np.ascontiguousarray(X[rs, cs]), layout)

    def gather(self, root: Optional[int] = None):
        comm = self.grid.comm
        rs, cs = self._local_slices()
        payload = (rs.start, cs.start, self.local)
        parts = comm.allgatherv(payload) if root is None else comm.gatherv(payload, root)
        if parts is None:
            return None
        out = np.empty((self.m, self.k), dtype=self.local.dtype)
        for r0, c0, blk in parts:
            out[r0:r0 + blk.shape[0], c0:c0 + blk.shape[1]] = blk
        return out


# -- sparse matrices ---------------------------------------------------------


class DistSparseMat2D:
    """Sparse matrix on a 2D grid; rank ``(i, j)`` holds block ``(i, j)`` as DCSC.

    Blocks follow ``row_part`` and ``col_part``; by default both use the
    remainder rule over the grid dimensions.
    """

    def __init__(self, grid: Grid2D, m: int, n: int, local: DcscMatrix,
                 row_part: Optional[Partition] = None,
                 col_part: Optional[Partition] = None):
        self.grid = grid
        self.m, self.n = int(m), int(n)
        self.row_part = row_part or Partition.regular(self.m, grid.pr)
        self.col_part = col_part or Partition.regular(self.n, grid.pc)
        self.local = local
        if local.shape != (self.row_part.block_size(grid.myrow),
                           self.col_part.block_size(grid.mycol)):
            raise ValueError("local block shape does not match the partition")

    @property
    def shape(self):
        return (self.m, self.n)

    @property
    def dtype(self):
        return self.local.dtype

    def is_regular(self) -> bool:
        return self.row_part.is_regular() and self.col_part.is_regular()

    def local_triples(self) -> Triples:
        """This rank's entries with global indices."""
        t = self.local.to_triples()
        rows = self.row_part.to_global(self.grid.myrow, t.rows)
        cols = self.col_part.to_global(self.grid.mycol, t.cols)
        return Triples(rows, cols, t.vals, self.m, self.n)

    def with_local(self, local: DcscMatrix) -> "DistSparseMat2D":
        return DistSparseMat2D(self.grid, self.m, self.n, local, self.row_part, self.col_part)

    def nnz(self) -> int:
        """Global nonzero count (collective)."""
        return self.grid.comm.allreduce(self.local.nnz)

    def __repr__(self):
        return (f"DistSparseMat2D({self.m}x{self.n} on {self.grid.pr}x{self.grid.pc}, "
                f"local nnz={self.local.nnz})")


class DistSparseMat3D:
    """Sparse matrix split over the layers of a 3D grid (see module docstring)."""

    def __init__(self, grid3: Grid3D, split_dim: str, m: int, n: int,
                 row_cells: np.ndarray, col_cells: np.ndarray, layer: DistSparseMat2D):
        if split_dim not in ("cols", "rows"):
            raise ValueError(f"split_dim must be 'cols' or 'rows', not {split_dim!r}")
        self.grid3 = grid3
        self.split_dim = split_dim
        self.m, self.n = int(m), int(n)
        self.row_cells = row_cells
        self.col_cells = col_cells
        self.layer = layer

    @property
    def shape(self):
        return (self.m, self.n)

    @staticmethod
    def partitions(split_dim, m, n, row_cells, col_cells, layer):
        """``(row_part, col_part)`` of the 2D block layout inside ``layer``."""
        def split_part(N, cells):
            return Partition(N, [[tuple(cells[layer, j])] for j in range(cells.shape[1])])

        def union_part(N, cells):
            return Partition(N, [[tuple(cells[l, j]) for l in range(cells.shape[0])]
                                 for j in range(cells.shape[1])])

        if split_dim == "cols":
            return union_part(m, row_cells), split_part(n, col_cells)
        return split_part(m, row_cells), union_part(n, col_cells)

    def local_triples(self) -> Triples:
        t = self.layer.local_triples()
        return Triples(t.rows, t.cols, t.vals, self.m, self.n)

    def __repr__(self):
        g = self.grid3
        return (f"DistSparseMat3D({self.m}x{self.n}, split {self.split_dim}, "
                f"{g.c}x{g.q}x{g.q})")


def regular_cells(N: int, c: int, q: int) -> np.ndarray:
    """Cells of the regular layout: layer ``l`` owns slab ``l`` of ``c``, cut in ``q``."""
    slabs = split_starts(N, c)
    cells = np.zeros((c, q, 2), dtype=np.int64)
    for l in range(c):
        inner = split_starts(int(slabs[l + 1] - slabs[l]), q) + slabs[l]
        cells[l, :, 0] = inner[:-1]
        cells[l, :, 1] = inner[1:]
    return cells


def supergrid_cells(N: int, c: int, q: int, P: int, s: int) -> np.ndarray:
    """Cells of the supergrid layout.

    Region ``j`` is the union of 2D blocks ``j*s .. (j+1)*s - 1`` of the
    ``P``-way split; it is cut into ``c`` pieces, piece ``l`` going to layer ``l``.
    """
    b = split_starts(N, P)
    cells = np.zeros((c, q, 2), dtype=np.int64)
    for j in range(q):
        lo, hi = int(b[j * s]), int(b[(j + 1) * s])
        pieces = split_starts(hi - lo, c) + lo
        cells[:, j, 0] = pieces[:-1]
        cells[:, j, 1] = pieces[1:]
    return cells


def _route(comm, dest, rows, cols, vals):
    """alltoallv of triples grouped by destination index; returns received lists."""
    order = np.argsort(dest, kind="stable")
    bounds = np.searchsorted(dest[order], np.arange(comm.size + 1))
    payloads = []
    for r in range(comm.size):
        sel = order[bounds[r]:bounds[r + 1]]
        payloads.append((rows[sel], cols[sel], vals[sel]))
    return comm.alltoallv(payloads)


def _assemble(received, nrows, ncols, dedup, dtype):
    rows = np.concatenate([p[0] for p in received]).astype(np.int64)
    cols = np.concatenate([p[1] for p in received]).astype(np.int64)
    vals = np.concatenate([p[2] for p in received]).astype(dtype, copy=False)
    rows, cols, vals = canonicalize(rows, cols, vals, dedup)
    return from_canonical(DcscMatrix, rows, cols, vals, nrows, ncols)


def distribute_triples(t: Triples, grid: Grid2D, dedup=None, *, replicated: bool = False,
                       row_part: Optional[Partition] = None,
                       col_part: Optional[Partition] = None) -> DistSparseMat2D:
    """Assemble a 2D matrix from triples held by the ranks (collective).

    Each rank passes the triples it holds; their union is the matrix.  With
    ``replicated=True`` every rank passes the same full list and keeps only
    the entries it owns, without communication.  Duplicates are folded with
    ``dedup`` in (source rank, input position) order.
    """
    t.check_bounds()
    row_part = row_part or Partition.regular(t.nrows, grid.pr)
    col_part = col_part or Partition.regular(t.ncols, grid.pc)
    bi, li = row_part.locate(t.rows)
    bj, lj = col_part.locate(t.cols)
    dest = bi * grid.pc + bj
    if replicated:
        sel = dest == grid.comm.rank
        received = [(li[sel], lj[sel], t.vals[sel])]
    else:
        received = _route(grid.comm, dest, li, lj, t.vals)
    local = _assemble(received, row_part.block_size(grid.myrow),
                      col_part.block_size(grid.mycol), dedup, t.vals.dtype)
    return DistSparseMat2D(grid, t.nrows, t.ncols, local, row_part, col_part)


def gather_matrix(A, root: Optional[int] = 0) -> Optional[Triples]:
    """Global entries of a 2D or 3D matrix in (col, row) order.

    Returned at ``root`` only, or at every rank when ``root`` is None.
    """
    comm = A.grid3.comm if isinstance(A, DistSparseMat3D) else A.grid.comm
    t = A.local_triples()
    payload = (t.rows, t.cols, t.vals)
    parts = comm.allgatherv(payload) if root is None else comm.gatherv(payload, root)
    if parts is None:
        return None
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    order = np.lexsort((rows, cols))
    return Triples(rows[order], cols[order], vals[order], A.m, A.n, dtype=vals.dtype)


def permutation(n: int, seed: int, stream: int) -> np.ndarray:
    """Uniform random permutation from a counter-based generator.

    Every rank derives the same permutation from ``(seed, stream)`` alone.
    """
    key = np.array([seed & (2**64 - 1), stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).permutation(n)


def _remap(A: DistSparseMat2D, row_map, col_map) -> DistSparseMat2D:
    t = A.local_triples()
    rows = row_map[t.rows] if row_map is not None else t.rows
    cols = col_map[t.cols] if col_map is not None else t.cols
    grid = A.grid
    rp, cp = Partition.regular(A.m, grid.pr), Partition.regular(A.n, grid.pc)
    bi, li = rp.locate(rows)
    bj, lj = cp.locate(cols)
    received = _route(grid.comm, bi * grid.pc + bj, li, lj, t.vals)
    local = _assemble(received, rp.block_size(grid.myrow), cp.block_size(grid.mycol),
                      None, t.vals.dtype)
    return DistSparseMat2D(grid, A.m, A.n, local, rp, cp)


def random_permute(A: DistSparseMat2D, seed: int):
    """``A'(pr[i], pc[j]) = A(i, j)`` for seeded uniform permutations.

    Returns ``(A', pr, pc)`` with the permutations as distributed vectors.
    """
    prow = permutation(A.m, seed, 0)
    pcol = permutation(A.n, seed, 1)
    Ap = _remap(A, prow, pcol)
    return Ap, DistDenseVec.from_global(A.grid, prow), DistDenseVec.from_global(A.grid, pcol)


def permute_matrix(A: DistSparseMat2D, rowperm: DistDenseVec,
                   colperm: DistDenseVec) -> DistSparseMat2D:
    """Apply explicit permutations given as distributed vectors (collective)."""
    return _remap(A, rowperm.gather(), colperm.gather())


def dist_transpose(A: DistSparseMat2D) -> DistSparseMat2D:
    """``A^T`` with the default block layout on the same grid (collective)."""
    t = A.local_triples()
    grid = A.grid
    rp, cp = Partition.regular(A.n, grid.pr), Partition.regular(A.m, grid.pc)
    bi, li = rp.locate(t.cols)
    bj, lj = cp.locate(t.rows)
    received = _route(grid.comm, bi * grid.pc + bj, li, lj, t.vals)
    local = _assemble(received, rp.block_size(grid.myrow), cp.block_size(grid.mycol),
                      None, t.vals.dtype)
    return DistSparseMat2D(grid, A.n, A.m, local, rp, cp)


def _cells_for(grid3: Grid3D, variant: str, src: Grid2D, m: int, n: int):
    c, q = grid3.c, grid3.q
    if variant == "regular":
        return regular_cells(m, c, q), regular_cells(n, c, q)
    sr, sc = grid3.subgrid
    if (src.pr, src.pc) != (sr * q, sc * q):
        raise ShapeError("supergrid layout needs the 2D grid the 3D grid was built from")
    return supergrid_cells(m, c, q, src.pr, sr), supergrid_cells(n, c, q, src.pc, sc)


def _cell_partition(N, cells):
    """Partition with one block per cell, numbered ``l * q + j``."""
    c, q, _ = cells.shape
    return Partition(N, [[tuple(cells[l, j])] for l in range(c) for j in range(q)])


def _union_partition(N, cells):
    c, q, _ = cells.shape
    return Partition(N, [[tuple(cells[l, j]) for l in range(c)] for j in range(q)])


def redistribute_3d(A: DistSparseMat2D, grid3: Grid3D, split_dim: str = "cols",
                    variant: Optional[str] = None) -> DistSparseMat3D:
    """Move a 2D matrix onto ``grid3`` split along ``split_dim`` (collective).

    ``regular`` routes every entry with one alltoallv over all ranks.
    ``supergrid`` (needs a grid from the supergrid conversion of ``A``'s grid)
    keeps every entry inside its fiber, so ``p/c`` concurrent alltoallv calls
    of ``c`` ranks each suffice.
    """
    variant = variant or grid3.variant
    if variant not in ("regular", "supergrid"):
        raise ValueError(f"unknown conversion variant {variant!r}")
    if variant == "supergrid" and grid3.variant != "supergrid":
        raise ShapeError("supergrid redistribution needs a supergrid-converted 3D grid")
    if not _same_comm(A.grid, grid3):
        raise ShapeError("2D and 3D grids must cover the same processes")
    if not A.is_regular():
        raise ShapeError("redistribution expects the default 2D block layout")
    if split_dim not in ("cols", "rows"):
        raise ValueError(f"split_dim must be 'cols' or 'rows', not {split_dim!r}")
    row_cells, col_cells = _cells_for(grid3, variant, A.grid, A.m, A.n)
    return _place_3d(A.local_triples(), grid3, split_dim, A.m, A.n, row_cells, col_cells,
                     fiber_only=variant == "supergrid")


def relayout_3d(A3: DistSparseMat3D, row_cells=None, col_cells=None) -> DistSparseMat3D:
    """Move ``A3`` onto new cells of the same 3D grid (collective, all ranks).

    Used when the inner dimensions of two operands were cut differently, as
    happens for the supergrid layout on a non-square 2D grid.
    """
    row_cells = A3.row_cells if row_cells is None else np.asarray(row_cells)
    col_cells = A3.col_cells if col_cells is None else np.asarray(col_cells)
    return _place_3d(A3.local_triples(), A3.grid3, A3.split_dim, A3.m, A3.n,
                     row_cells, col_cells, fiber_only=False)


def _place_3d(t, grid3, split_dim, m, n, row_cells, col_cells, fiber_only):
    q = grid3.q
    if split_dim == "cols":
        cell, lj = _cell_partition(n, col_cells).locate(t.cols)
        layer, bj = np.divmod(cell, q)
        bi, li = _union_partition(m, row_cells).locate(t.rows)
    else:
        cell, li = _cell_partition(m, row_cells).locate(t.rows)
        layer, bi = np.divmod(cell, q)
        bj, lj = _union_partition(n, col_cells).locate(t.cols)
    if not fiber_only:
        rank_of = np.zeros((grid3.c, q, q), dtype=np.int64)
        for (l, i, j), r in grid3.rank_of.items():
            rank_of[l, i, j] = r
        received = _route(grid3.comm, rank_of[layer, bi, bj], li, lj, t.vals)
    else:
        if np.any(bi != grid3.row) or np.any(bj != grid3.col):
            raise AssertionError("supergrid routing left the fiber")
        received = _route(grid3.fiber_comm, layer, li, lj, t.vals)
    rp, cp = DistSparseMat3D.partitions(split_dim, m, n, row_cells, col_cells, grid3.layer)
    lg = grid3.layer_grid
    local = _assemble(received, rp.block_size(lg.myrow), cp.block_size(lg.mycol),
                      None, t.vals.dtype)
    layer_mat = DistSparseMat2D(lg, m, n, local, rp, cp)
    return DistSparseMat3D(grid3, split_dim, m, n, row_cells, col_cells, layer_mat)


def redistribute_2d(A3: DistSparseMat3D, grid: Grid2D, dedup=None) -> DistSparseMat2D:
    """Bring a 3D matrix back to the default 2D layout on ``grid`` (collective)."""
    if not _same_comm(grid, A3.grid3):
        raise ShapeError("2D and 3D grids must cover the same processes")
    return distribute_triples(A3.local_triples(), grid, dedup)
