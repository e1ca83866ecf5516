"""Local sparse containers: triples, CSC and doubly compressed CSC.

All formats keep row ids strictly increasing inside each column and never
store structural zeros.  Containers are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterator, Union

import numpy as np

from .errors import IndexWidthError
from .semiring import Semiring, UnaryOp

__all__ = [
    "IndexWidths",
    "DEFAULT_WIDTHS",
    "Triples",
    "CscMatrix",
    "DcscMatrix",
    "LocalSparseVec",
    "build_csc",
    "build_dcsc",
    "transpose_local",
    "filter_local",
    "canonicalize",
]


@dataclass(frozen=True)
class IndexWidths:
    """Global and local index types.

    Storage inside local containers uses ``local``; offsets exchanged between
    ranks and indices handed back to users use ``global_``.
    """

    global_: np.dtype = np.dtype(np.int64)
    local: np.dtype = np.dtype(np.int32)

    def check_local(self, extent: int) -> None:
        if extent - 1 > np.iinfo(self.local).max:
            raise IndexWidthError(
                f"local extent {extent} exceeds the {np.dtype(self.local).name} local index"
            )


DEFAULT_WIDTHS = IndexWidths()


class Triples:
    """Coordinate list ``(rows, cols, vals)`` with matrix dimensions.

    Duplicates and any order are allowed; :func:`build_csc` and
    :func:`build_dcsc` canonicalize.
    """

    def __init__(self, rows, cols, vals, nrows: int, ncols: int, dtype=None):
        self.rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        self.cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        if dtype is None and isinstance(vals, np.ndarray):
            dtype = vals.dtype
        self.vals = _as_values(vals, dtype)
        if not (len(self.rows) == len(self.cols) == len(self.vals)):
            raise ValueError("rows, cols and vals must have equal length")
        self.nrows = int(nrows)
        self.ncols = int(ncols)

    @classmethod
    def empty(cls, nrows, ncols, dtype=np.float64):
        return cls([], [], np.empty(0, dtype=dtype), nrows, ncols)

    @classmethod
    def from_dense(cls, dense, present=None):
        """Entries of a 2-D array where ``present`` (default: nonzero) holds."""
        dense = np.asarray(dense)
        mask = dense != 0 if present is None else np.asarray(present, dtype=bool)
        r, c = np.nonzero(mask)
        return cls(r, c, dense[r, c], *dense.shape)

    @property
    def nnz(self) -> int:
        return len(self.rows)

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    def __len__(self):
        return self.nnz

    def __iter__(self):
        return zip(self.rows.tolist(), self.cols.tolist(), self.vals.tolist())

    def check_bounds(self) -> None:
        if self.nnz == 0:
            return
        if self.rows.min() < 0 or self.rows.max() >= self.nrows:
            raise IndexError(f"row index out of range for {self.nrows} rows")
        if self.cols.min() < 0 or self.cols.max() >= self.ncols:
            raise IndexError(f"column index out of range for {self.ncols} columns")

    def sorted(self) -> "Triples":
        """Column-major (col, row) ordered copy; duplicates kept in input order."""
        order = np.lexsort((self.rows, self.cols))
        return Triples(self.rows[order], self.cols[order], self.vals[order],
                       self.nrows, self.ncols)

    def to_dict(self) -> dict:
        return {(r, c): v for r, c, v in self}

    def to_dense(self, zero=0, dtype=None):
        out = np.full(self.shape, zero, dtype=dtype or self.vals.dtype)
        out[self.rows, self.cols] = self.vals
        return out

    def concat(self, other: "Triples") -> "Triples":
        return Triples(np.concatenate([self.rows, other.rows]),
                       np.concatenate([self.cols, other.cols]),
                       np.concatenate([self.vals, other.vals]),
                       self.nrows, self.ncols)

    def __repr__(self):
        return f"Triples({self.nrows}x{self.ncols}, nnz={self.nnz})"


def _as_values(vals, dtype=None):
    if isinstance(vals, np.ndarray) and (dtype is None or vals.dtype == dtype):
        return vals.reshape(-1)
    if dtype is not None and np.dtype(dtype) == object:
        out = np.empty(len(vals), dtype=object)
        out[:] = list(vals)
        return out
    return np.asarray(vals, dtype=dtype).reshape(-1)


def _add_of(dedup):
    if isinstance(dedup, Semiring):
        return dedup.add, dedup.add_ufunc
    return dedup, None


def canonicalize(rows, cols, vals, dedup=None):
    """Sort by (col, row) and fold duplicates left-to-right in input order.

    ``dedup`` is a :class:`Semiring` or a binary callable.  Without it a
    duplicate coordinate raises ``ValueError``.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    order = np.lexsort((rows, cols))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if len(rows) < 2:
        return rows, cols, vals
    new = np.empty(len(rows), dtype=bool)
    new[0] = True
    new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    if new.all():
        return rows, cols, vals
    if dedup is None:
        raise ValueError("duplicate coordinates and no dedup operation given")
    add, ufunc = _add_of(dedup)
    starts = np.flatnonzero(new)
    if ufunc is not None and vals.dtype != object:
        folded = ufunc.reduceat(vals, starts).astype(vals.dtype, copy=False)
    else:
        ends = np.append(starts[1:], len(vals))
        lst = vals.tolist()
        acc = []
        for s, e in zip(starts.tolist(), ends.tolist()):
            a = lst[s]
            for k in range(s + 1, e):
                a = add(a, lst[k])
            acc.append(a)
        folded = _as_values(acc, vals.dtype)
    return rows[starts], cols[starts], folded


class _ColumnMatrix:
    """Shared behavior for the two column-compressed formats."""

    nrows: int
    ncols: int
    rowids: np.ndarray
    vals: np.ndarray

    # (nonempty column ids, start offsets, end offsets)
    def _spans(self):
        raise NotImplementedError

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return len(self.rowids)

    @property
    def dtype(self):
        return self.vals.dtype

    @property
    def nzc(self) -> int:
        """Number of nonempty columns."""
        return len(self._spans()[0])

    def iter_columns(self) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        """Nonempty columns in increasing order as ``(j, rowids, vals)``."""
        cols, starts, ends = self._spans()
        for j, s, e in zip(cols.tolist(), starts.tolist(), ends.tolist()):
            yield j, self.rowids[s:e], self.vals[s:e]

    def iter_entries(self) -> Iterator[tuple[int, int, object]]:
        """Every stored entry as ``(col, row, val)`` in column-major order."""
        for j, rows, vals in self.iter_columns():
            for i, v in zip(rows.tolist(), vals.tolist()):
                yield j, i, v

    @cached_property
    def column_lists(self) -> dict:
        """``{j: (row list, value list)}`` for kernels working on Python scalars."""
        out = {}
        rows = self.rowids.tolist()
        vals = self.vals.tolist()
        cols, starts, ends = self._spans()
        for j, s, e in zip(cols.tolist(), starts.tolist(), ends.tolist()):
            out[j] = (rows[s:e], vals[s:e])
        return out

    def column(self, j: int):
        got = self.column_lists.get(j)
        if got is None:
            return [], []
        return got

    def col_nnz(self) -> np.ndarray:
        """Dense per-column nonzero counts (length ``ncols``)."""
        out = np.zeros(self.ncols, dtype=np.int64)
        cols, starts, ends = self._spans()
        out[cols] = ends - starts
        return out

    def col_indices(self) -> np.ndarray:
        """Column id of every stored entry (global width)."""
        cols, starts, ends = self._spans()
        return np.repeat(cols.astype(np.int64), ends - starts)

    def to_triples(self) -> Triples:
        return Triples(self.rowids.astype(np.int64), self.col_indices(), self.vals,
                       self.nrows, self.ncols)

    def to_dense(self, zero=0, dtype=None):
        return self.to_triples().to_dense(zero, dtype)

    def same_entries(self, other) -> bool:
        if self.shape != other.shape or self.nnz != other.nnz:
            return False
        return (np.array_equal(self.rowids, other.rowids)
                and np.array_equal(self.col_indices(), other.col_indices())
                and self.vals.tolist() == other.vals.tolist())

    def __eq__(self, other):
        if not isinstance(other, _ColumnMatrix):
            return NotImplemented
        return self.same_entries(other)

    __hash__ = None


class CscMatrix(_ColumnMatrix):
    """Compressed sparse columns: ``colptr`` has ``ncols + 1`` offsets."""

    def __init__(self, colptr, rowids, vals, nrows, ncols, widths=DEFAULT_WIDTHS):
        widths.check_local(nrows)
        widths.check_local(ncols)
        self.colptr = np.asarray(colptr, dtype=np.int64)
        self.rowids = np.asarray(rowids, dtype=widths.local)
        self.vals = vals
        self.nrows = int(nrows)
        self.ncols = int(ncols)
        self.widths = widths

    @cached_property
    def _span_cache(self):
        counts = np.diff(self.colptr)
        cols = np.flatnonzero(counts)
        return cols, self.colptr[cols], self.colptr[cols + 1]

    def _spans(self):
        return self._span_cache

    @property
    def index_slots(self) -> int:
        return len(self.colptr) + len(self.rowids)

    def col_nnz(self):
        return np.diff(self.colptr)

    def __repr__(self):
        return f"CscMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"


class DcscMatrix(_ColumnMatrix):
    """Doubly compressed sparse columns: only nonempty columns are stored.

    ``jc`` lists nonempty column ids, ``cp`` has ``len(jc) + 1`` offsets.
    Column lookup is a binary search over ``jc``.
    """

    def __init__(self, jc, cp, rowids, vals, nrows, ncols, widths=DEFAULT_WIDTHS):
        widths.check_local(nrows)
        widths.check_local(ncols)
        self.jc = np.asarray(jc, dtype=widths.local)
        self.cp = np.asarray(cp, dtype=np.int64)
        self.rowids = np.asarray(rowids, dtype=widths.local)
        self.vals = vals
        self.nrows = int(nrows)
        self.ncols = int(ncols)
        self.widths = widths

    def _spans(self):
        return self.jc, self.cp[:-1], self.cp[1:]

    def find_column(self, j: int) -> int:
        """Position of column ``j`` in ``jc`` or -1."""
        pos = int(np.searchsorted(self.jc, j))
        if pos < len(self.jc) and self.jc[pos] == j:
            return pos
        return -1

    @property
    def index_slots(self) -> int:
        return len(self.jc) + len(self.cp) + len(self.rowids)

    def __repr__(self):
        return f"DcscMatrix({self.nrows}x{self.ncols}, nnz={self.nnz}, nzc={self.nzc})"


LocalMatrix = Union[CscMatrix, DcscMatrix]


def from_canonical(fmt, rows, cols, vals, nrows, ncols, widths=DEFAULT_WIDTHS):
    """Build ``fmt`` from entries already sorted by (col, row) without duplicates."""
    cols = np.asarray(cols, dtype=np.int64)
    if fmt is CscMatrix or fmt == "csc":
        colptr = np.zeros(ncols + 1, dtype=np.int64)
        if len(cols):
            np.cumsum(np.bincount(cols, minlength=ncols), out=colptr[1:])
        return CscMatrix(colptr, rows, vals, nrows, ncols, widths)
    jc, counts = np.unique(cols, return_counts=True)
    cp = np.zeros(len(jc) + 1, dtype=np.int64)
    np.cumsum(counts, out=cp[1:])
    return DcscMatrix(jc, cp, rows, vals, nrows, ncols, widths)


def _build(fmt, t: Triples, dedup, widths):
    t.check_bounds()
    rows, cols, vals = canonicalize(t.rows, t.cols, t.vals, dedup)
    return from_canonical(fmt, rows, cols, vals, t.nrows, t.ncols, widths)


def build_csc(t: Triples, dedup=None, widths=DEFAULT_WIDTHS) -> CscMatrix:
    """CSC from triples; duplicates are folded with ``dedup`` (semiring add)."""
    return _build(CscMatrix, t, dedup, widths)


def build_dcsc(t: Triples, dedup=None, widths=DEFAULT_WIDTHS) -> DcscMatrix:
    """DCSC from triples; storage is independent of ``ncols``."""
    return _build(DcscMatrix, t, dedup, widths)


def same_format(a, rows, cols, vals, nrows, ncols):
    return from_canonical(type(a), rows, cols, vals, nrows, ncols, a.widths)


def transpose_local(a: LocalMatrix) -> LocalMatrix:
    rows = a.col_indices()
    cols = a.rowids.astype(np.int64)
    order = np.lexsort((rows, cols))
    return same_format(a, rows[order], cols[order], a.vals[order], a.ncols, a.nrows)


def filter_local(a: LocalMatrix, keep: Union[UnaryOp, Callable]) -> LocalMatrix:
    """Keep exactly the entries whose value satisfies ``keep``."""
    mask = np.fromiter((bool(keep(v)) for v in a.vals.tolist()), dtype=bool,
                       count=a.nnz)
    return same_format(a, a.rowids[mask], a.col_indices()[mask], a.vals[mask],
                       a.nrows, a.ncols)


class LocalSparseVec:
    """Sparse vector: strictly increasing ``idx`` with matching ``vals``."""

    def __init__(self, idx, vals, n: int, widths=DEFAULT_WIDTHS):
        widths.check_local(n)
        self.idx = np.asarray(idx, dtype=widths.local).reshape(-1)
        self.vals = vals if isinstance(vals, np.ndarray) else _as_values(vals)
        self.n = int(n)
        if len(self.idx) != len(self.vals):
            raise ValueError("idx and vals must have equal length")
        if len(self.idx) and (np.any(np.diff(self.idx) <= 0) or self.idx[0] < 0
                              or self.idx[-1] >= self.n):
            raise ValueError("indices must be strictly increasing and within [0, n)")

    @classmethod
    def empty(cls, n, dtype=np.float64):
        return cls([], np.empty(0, dtype=dtype), n)

    @classmethod
    def from_dense(cls, dense, present=None):
        dense = np.asarray(dense)
        mask = dense != 0 if present is None else np.asarray(present, dtype=bool)
        idx = np.flatnonzero(mask)
        return cls(idx, dense[idx], len(dense))

    @property
    def nnz(self) -> int:
        return len(self.idx)

    @property
    def density(self) -> float:
        return self.nnz / self.n if self.n else 0.0

    def to_dense(self, zero=0, dtype=None):
        out = np.full(self.n, zero, dtype=dtype or self.vals.dtype)
        out[self.idx] = self.vals
        return out

    def items(self):
        return zip(self.idx.tolist(), self.vals.tolist())

    def __eq__(self, other):
        if not isinstance(other, LocalSparseVec):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.idx, other.idx)
                and self.vals.tolist() == other.vals.tolist())

    __hash__ = None

    def __repr__(self):
        return f"LocalSparseVec(n={self.n}, nnz={self.nnz})"
