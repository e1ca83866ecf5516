"""Parallel readers and writers.

Text readers split the file into equal byte ranges, one per rank.  A rank
parses every line whose first byte lies in its range, so each line is read
exactly once whatever the line lengths.  Errors found by any rank are agreed
on collectively and raised everywhere.

Binary layout (all little-endian)::

    b"CB2B"  u32 version=1  u64 m  u64 n  u64 nnz
    nnz x (u64 row, u64 col, f64 value)
"""

from __future__ import annotations

import hashlib
import operator
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .comm import Grid2D
from .distobj import DistDenseVec, DistSparseMat2D, VectorLayout, distribute_triples
from .errors import FormatError, IoError
from .localmat import Triples

__all__ = [
    "read_matrix_market",
    "write_matrix_market",
    "read_labeled_tuples",
    "LabelMap",
    "label_hash",
    "read_binary",
    "write_binary",
    "binary_io",
    "owned_lines",
    "BINARY_MAGIC",
]

BINARY_MAGIC = b"CB2B"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sIQQQ")
_RECORD = np.dtype([("row", "<u8"), ("col", "<u8"), ("val", "<f8")])

_HASH_KEY = b"gridblas-labels"
_HASH_BITS = 63


def owned_lines(path, rank: int, nranks: int, skip_before: int = 0):
    """Yield ``(offset, line)`` for the lines starting in this rank's byte range."""
    size = os.path.getsize(path)
    lo, hi = size * rank // nranks, size * (rank + 1) // nranks
    with open(path, "rb") as f:
        if lo > 0:
            f.seek(lo - 1)
            if f.read(1) != b"\n":
                f.readline()
        pos = f.tell()
        while pos < hi:
            line = f.readline()
            if not line:
                break
            if pos >= skip_before:
                yield pos, line
            pos += len(line)


def _agree(comm, error: Optional[BaseException]):
    """Raise on every rank if any rank hit an error (first by rank wins)."""
    errors = comm.allgatherv(None if error is None else (type(error), str(error)))
    for e in errors:
        if e is not None:
            raise e[0](e[1])


def _open_error(exc: OSError) -> IoError:
    return IoError(f"{exc.filename}: {exc.strerror or exc}")


# -- Matrix Market -------------------------------------------------------------


def _parse_mm_header(path):
    with open(path, "rb") as f:
        banner = f.readline().decode(errors="replace").split()
        if len(banner) != 5 or banner[0].lower() != "%%matrixmarket":
            raise FormatError("missing %%MatrixMarket banner")
        obj, fmt, field, symmetry = (b.lower() for b in banner[1:])
        if obj != "matrix" or fmt != "coordinate":
            raise FormatError(f"only coordinate matrices are supported, got {obj} {fmt}")
        if field not in ("real", "integer", "pattern"):
            raise FormatError(f"unsupported field {field!r}")
        if symmetry not in ("general", "symmetric"):
            raise FormatError(f"unsupported symmetry {symmetry!r}")
        while True:
            line = f.readline()
            if not line:
                raise FormatError("missing size line")
            text = line.strip()
            if text and not text.startswith(b"%"):
                break
        parts = text.split()
        try:
            m, n, nnz = (int(p) for p in parts)
        except ValueError:
            raise FormatError(f"malformed size line {text!r}") from None
        if m < 0 or n < 0 or nnz < 0:
            raise FormatError(f"negative size in {text!r}")
        return dict(field=field, symmetry=symmetry, m=m, n=n, nnz=nnz, body=f.tell())


def _parse_mm_lines(lines, field):
    rows, cols, vals = [], [], []
    want = 2 if field == "pattern" else 3
    conv = int if field == "integer" else float
    for _, line in lines:
        parts = line.split()
        if not parts or parts[0].startswith(b"%"):
            continue
        if len(parts) != want:
            raise FormatError(f"expected {want} fields, got {line.strip()!r}")
        try:
            rows.append(int(parts[0]))
            cols.append(int(parts[1]))
            vals.append(1 if want == 2 else conv(parts[2]))
        except ValueError:
            raise FormatError(f"malformed entry {line.strip()!r}") from None
    return rows, cols, vals


def read_matrix_market(path, grid: Grid2D, dedup=operator.add) -> DistSparseMat2D:
    """Read a coordinate Matrix Market file in parallel (collective).

    ``integer`` files give int64 values; ``real`` and ``pattern`` files give
    float64 (pattern entries are 1).  Symmetric files are expanded off the
    diagonal.  Duplicate coordinates are folded with ``dedup``.
    """
    comm = grid.comm
    meta, error = None, None
    if comm.rank == 0:
        try:
            meta = _parse_mm_header(path)
        except (FormatError, OSError) as exc:
            error = _open_error(exc) if isinstance(exc, OSError) else exc
    _agree(comm, error)
    meta = comm.bcast(meta, root=0)
    dtype = np.int64 if meta["field"] == "integer" else np.float64
    rows = cols = vals = None
    try:
        rows, cols, vals = _parse_mm_lines(
            owned_lines(path, comm.rank, comm.size, meta["body"]), meta["field"])
    except OSError as exc:
        error = _open_error(exc)
    except FormatError as exc:
        error = exc
    _agree(comm, error)
    total = comm.allreduce(len(rows))
    if total != meta["nnz"]:
        raise FormatError(f"header declares {meta['nnz']} entries, file has {total}")
    r = np.asarray(rows, dtype=np.int64) - 1
    c = np.asarray(cols, dtype=np.int64) - 1
    v = np.asarray(vals, dtype=dtype)
    m, n = meta["m"], meta["n"]
    bad = (r < 0) | (r >= m) | (c < 0) | (c >= n)
    error = None
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        error = IndexError(f"entry ({r[k] + 1}, {c[k] + 1}) outside a {m}x{n} matrix")
    _agree(comm, error)
    if meta["symmetry"] == "symmetric":
        off = r != c
        r, c, v = (np.concatenate([r, c[off]]), np.concatenate([c, r[off]]),
                   np.concatenate([v, v[off]]))
    return distribute_triples(Triples(r, c, v, m, n, dtype=dtype), grid, dedup)


def _format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _positional_write(path, offset: int, data: bytes):
    fd = os.open(path, os.O_WRONLY)
    try:
        view = memoryview(data)
        while view:
            done = os.pwrite(fd, view, offset)
            view, offset = view[done:], offset + done
    finally:
        os.close(fd)


def _collective_write(comm, path, header: bytes, body: bytes):
    """Rank 0 writes ``header``; every rank writes ``body`` at its exscan offset."""
    offset = comm.exscan(len(body))
    error = None
    if comm.rank == 0:
        try:
            with open(path, "wb") as f:
                f.write(header)
        except OSError as exc:
            error = _open_error(exc)
    _agree(comm, error)
    error = None
    try:
        if body:
            _positional_write(path, len(header) + offset, body)
    except OSError as exc:
        error = _open_error(exc)
    _agree(comm, error)


def write_matrix_market(A: DistSparseMat2D, path) -> None:
    """Write ``A`` as a general real coordinate file (collective).

    Entries appear by rank, then in local (col, row) order.  Floats use the
    shortest decimal form that reads back to the same double.
    """
    comm = A.grid.comm
    t = A.local_triples()
    body = "".join(f"{r + 1} {c + 1} {_format_value(v)}\n"
                   for r, c, v in zip(t.rows.tolist(), t.cols.tolist(), t.vals.tolist()))
    nnz = comm.allreduce(t.nnz)
    header = f"%%MatrixMarket matrix coordinate real general\n{A.m} {A.n} {nnz}\n"
    _collective_write(comm, path, header.encode(), body.encode())


# -- labeled tuples --------------------------------------------------------------


def label_hash(label: str) -> int:
    """Keyed 63-bit hash used to route and order labels."""
    digest = hashlib.blake2b(label.encode(), digest_size=8, key=_HASH_KEY).digest()
    return int.from_bytes(digest, "little") >> (64 - _HASH_BITS)


@dataclass
class LabelMap:
    """New consecutive ids and the original labels they stand for.

    ``labels`` is a distributed vector with ``labels[id] = original label``;
    ``lookup`` maps each label this rank read to its id.
    """

    labels: DistDenseVec
    lookup: dict

    @property
    def n(self) -> int:
        return self.labels.n

    def gather(self) -> list:
        return list(self.labels.gather())


def _parse_label_lines(lines):
    out = []
    for _, line in lines:
        parts = line.decode().split()
        if not parts:
            continue
        if len(parts) < 2:
            raise FormatError(f"line needs a row and a column label: {line.strip()!r}")
        if len(parts) > 2:
            try:
                value = float(parts[2])
            except ValueError:
                raise FormatError(f"non-numeric value {parts[2]!r}") from None
        else:
            value = 1.0
        out.append((parts[0], parts[1], value))
    return out


def _assign_ids(grid: Grid2D, labels: set) -> LabelMap:
    """Give the distinct labels of all ranks consecutive ids (collective)."""
    comm = grid.comm
    P = comm.size
    mine = sorted(labels)
    hashes = [label_hash(s) for s in mine]
    outgoing = [[] for _ in range(P)]
    for s, h in zip(mine, hashes):
        outgoing[(h * P) >> _HASH_BITS].append((h, s))
    received = comm.alltoallv(outgoing)
    owned = sorted({pair for part in received for pair in part})
    base = comm.exscan(len(owned))
    ids = {pair[1]: base + k for k, pair in enumerate(owned)}
    replies = comm.alltoallv([[ids[s] for _, s in part] for part in received])
    lookup = {}
    for sent, got in zip(outgoing, replies):
        for (_, s), i in zip(sent, got):
            lookup[s] = i
    total = comm.allreduce(len(owned))
    # Move (id, label) pairs to the owners of the ids in the vector layout.
    layout = VectorLayout(total, grid.pr, grid.pc)
    id_arr = np.arange(base, base + len(owned), dtype=np.int64)
    dest, off = layout.owner(id_arr)
    moves = [[] for _ in range(P)]
    for d, o, (_, s) in zip(dest.tolist(), off.tolist(), owned):
        moves[d].append((o, s))
    local = np.empty(layout.local_length(comm.rank), dtype=object)
    for part in comm.alltoallv(moves):
        for o, s in part:
            local[o] = s
    return LabelMap(DistDenseVec(grid, total, local), lookup)


def read_labeled_tuples(path, grid: Grid2D, dedup=operator.add,
                        shared_labels: bool = False):
    """Read ``row-label col-label [value]`` lines and relabel to integers (collective).

    Pass 1 hashes every label to an owner rank that deduplicates and numbers
    its labels in (hash, label) order after an exclusive scan of the
    per-owner counts.  Pass 2 re-reads the file and emits integer triples.
    Returns ``(A, row_map, col_map)``; with ``shared_labels`` both
    dimensions use one label space and the two maps are the same object.
    """
    comm = grid.comm
    entries, error = None, None
    try:
        entries = _parse_label_lines(owned_lines(path, comm.rank, comm.size))
    except OSError as exc:
        error = _open_error(exc)
    except (FormatError, UnicodeDecodeError) as exc:
        error = FormatError(str(exc))
    _agree(comm, error)
    row_labels = {e[0] for e in entries}
    col_labels = {e[1] for e in entries}
    if shared_labels:
        row_map = col_map = _assign_ids(grid, row_labels | col_labels)
    else:
        row_map = _assign_ids(grid, row_labels)
        col_map = _assign_ids(grid, col_labels)
    del entries
    # Pass 2: read the file again and emit triples with the new ids.
    entries = _parse_label_lines(owned_lines(path, comm.rank, comm.size))
    rows = np.array([row_map.lookup[e[0]] for e in entries], dtype=np.int64)
    cols = np.array([col_map.lookup[e[1]] for e in entries], dtype=np.int64)
    vals = np.array([e[2] for e in entries], dtype=np.float64)
    t = Triples(rows, cols, vals, row_map.n, col_map.n, dtype=np.float64)
    return distribute_triples(t, grid, dedup), row_map, col_map


# -- binary ----------------------------------------------------------------------


def write_binary(A: DistSparseMat2D, path) -> None:
    """Write ``A`` in the binary layout (collective); values are stored as f64."""
    comm = A.grid.comm
    t = A.local_triples()
    rec = np.empty(t.nnz, dtype=_RECORD)
    rec["row"], rec["col"] = t.rows, t.cols
    rec["val"] = t.vals.astype(np.float64)
    nnz = comm.allreduce(t.nnz)
    header = _HEADER.pack(BINARY_MAGIC, BINARY_VERSION, A.m, A.n, nnz)
    _collective_write(comm, path, header, rec.tobytes())


def _read_binary_header(path):
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise FormatError("truncated binary header")
    magic, version, m, n, nnz = _HEADER.unpack(raw)
    if magic != BINARY_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != BINARY_VERSION:
        raise FormatError(f"unsupported binary version {version}")
    if size < _HEADER.size + nnz * _RECORD.itemsize:
        raise FormatError(f"truncated binary file: {nnz} records declared, "
                          f"{(size - _HEADER.size) // _RECORD.itemsize} present")
    return m, n, nnz


def read_binary(path, grid: Grid2D, dedup=None) -> DistSparseMat2D:
    """Read the binary layout (collective); each rank reads a record range."""
    comm = grid.comm
    meta, error = None, None
    if comm.rank == 0:
        try:
            meta = _read_binary_header(path)
        except OSError as exc:
            error = _open_error(exc)
        except FormatError as exc:
            error = exc
    _agree(comm, error)
    m, n, nnz = comm.bcast(meta, root=0)
    lo, hi = nnz * comm.rank // comm.size, nnz * (comm.rank + 1) // comm.size
    rec = np.fromfile(path, dtype=_RECORD, count=hi - lo,
                      offset=_HEADER.size + lo * _RECORD.itemsize)
    t = Triples(rec["row"].astype(np.int64), rec["col"].astype(np.int64),
                rec["val"].copy(), m, n, dtype=np.float64)
    error = None
    try:
        t.check_bounds()
    except IndexError as exc:
        error = exc
    _agree(comm, error)
    return distribute_triples(t, grid, dedup)


def binary_io(mode: str, path, obj):
    """``binary_io('write', path, A)`` or ``binary_io('read', path, grid)``."""
    if mode == "write":
        return write_binary(obj, path)
    if mode == "read":
        return read_binary(path, obj)
    raise ValueError(f"mode must be 'read' or 'write', not {mode!r}")
