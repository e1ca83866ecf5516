"""Rank groups, collectives and process-grid overlays.

Ranks are threads of one process.  A collective is a rendezvous: every
member deposits its contribution under a key made of the group membership
and a per-group call sequence number, waits for the rest, then computes its
own result from all contributions.  Nothing here depends on the transport
being in-process except :class:`Transport` itself.

Every call is recorded in per-rank :class:`Counters` (calls, messages sent,
bytes sent, and the share of those bytes that carried sparse matrices).
"""

from __future__ import annotations

import json
import math
import operator
import threading
import time
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Any, Callable, Optional

import numpy as np

from .errors import ArityError, DeadlockError, ShapeError

__all__ = [
    "DEFAULT_TIMEOUT",
    "Transport",
    "Comm",
    "Counters",
    "RankAborted",
    "run_spmd",
    "payload_nbytes",
    "Grid2D",
    "Grid3D",
    "make_grid",
    "square_grid",
    "grid_convert_2d_to_3d",
    "check_3d_shape",
]

DEFAULT_TIMEOUT = 10.0


class RankAborted(RuntimeError):
    """Raised in ranks blocked in a collective after another rank failed."""


def payload_nbytes(obj) -> tuple[int, int]:
    """Estimated ``(total bytes, sparse-matrix bytes)`` of a message payload."""
    from .localmat import Triples, _ColumnMatrix

    if obj is None:
        return 0, 0
    if isinstance(obj, np.ndarray):
        return (obj.nbytes if obj.dtype != object else 8 * obj.size), 0
    if isinstance(obj, (bytes, bytearray)):
        return len(obj), 0
    if isinstance(obj, str):
        return len(obj.encode()), 0
    if isinstance(obj, (bool, int, float, np.generic)):
        return 8, 0
    if isinstance(obj, _ColumnMatrix):
        size = sum(payload_nbytes(getattr(obj, f))[0]
                   for f in ("colptr", "jc", "cp", "rowids", "vals") if hasattr(obj, f))
        return size, size
    if isinstance(obj, Triples):
        size = obj.rows.nbytes + obj.cols.nbytes + payload_nbytes(obj.vals)[0]
        return size, size
    if isinstance(obj, dict):
        obj = list(obj.items())
    if isinstance(obj, (list, tuple)):
        total = sparse = 0
        for item in obj:
            t, s = payload_nbytes(item)
            total += t
            sparse += s
        return total, sparse
    if hasattr(obj, "__dict__"):
        return payload_nbytes(vars(obj))
    return 8, 0


@dataclass
class CounterEntry:
    calls: int = 0
    messages: int = 0
    bytes: int = 0
    sparse_bytes: int = 0
    group_size: int = 0


class Counters:
    """Per-rank message counters keyed by ``(group name, collective kind)``."""

    def __init__(self):
        self.entries: dict = defaultdict(CounterEntry)

    def record(self, group, kind, size, messages, payload):
        e = self.entries[(group, kind)]
        e.calls += 1
        e.group_size = size
        if messages:
            total, sparse = payload_nbytes(payload)
            e.messages += messages
            e.bytes += total
            e.sparse_bytes += sparse

    def reset(self):
        self.entries.clear()

    def snapshot(self) -> dict:
        return {k: CounterEntry(**asdict(v)) for k, v in self.entries.items()}

    def calls(self, kind=None, group=None) -> int:
        return sum(e.calls for (g, k), e in self.entries.items()
                   if (kind is None or k == kind) and (group is None or g == group))

    def total(self, field="bytes", kind=None, group=None) -> int:
        return sum(getattr(e, field) for (g, k), e in self.entries.items()
                   if (kind is None or k == kind) and (group is None or g == group))

    def bytes_by_collective(self) -> dict:
        out = defaultdict(int)
        for (_, kind), e in self.entries.items():
            out[kind] += e.bytes
        return dict(out)

    def rows(self) -> list[dict]:
        return [dict(group=g, kind=k, **asdict(e))
                for (g, k), e in sorted(self.entries.items())]

    def dump(self, fmt="text") -> str:
        rows = self.rows()
        if fmt == "json":
            return json.dumps(rows)
        lines = [f"{'group':<8}{'kind':<12}{'calls':>8}{'messages':>10}{'bytes':>12}"]
        for r in rows:
            lines.append(f"{r['group']:<8}{r['kind']:<12}{r['calls']:>8}"
                         f"{r['messages']:>10}{r['bytes']:>12}")
        return "\n".join(lines)


class _Slot:
    __slots__ = ("kind", "deposits", "count", "readers", "error")

    def __init__(self, kind, n):
        self.kind = kind
        self.deposits = [None] * n
        self.count = 0
        self.readers = 0
        self.error = None


class Transport:
    """Shared-memory rendezvous point for ``size`` rank threads."""

    def __init__(self, size: int, timeout: float = DEFAULT_TIMEOUT):
        self.size = size
        self.timeout = timeout
        self._cond = threading.Condition()
        self._slots: dict = {}
        self._aborted: Optional[BaseException] = None

    def abort(self, exc: BaseException) -> None:
        with self._cond:
            if self._aborted is None:
                self._aborted = exc
            self._cond.notify_all()

    def rendezvous(self, key, n, index, kind, payload) -> list:
        with self._cond:
            if self._aborted is not None:
                raise RankAborted("another rank failed") from self._aborted
            slot = self._slots.get(key)
            if slot is None:
                slot = self._slots[key] = _Slot(kind, n)
            if slot.kind != kind and slot.error is None:
                slot.error = DeadlockError(
                    f"collective mismatch in group {key[0]}: {slot.kind} vs {kind}")
                self._cond.notify_all()
            slot.deposits[index] = payload
            slot.count += 1
            if slot.count == n:
                self._cond.notify_all()
            deadline = time.monotonic() + self.timeout
            while slot.count < n and slot.error is None and self._aborted is None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    slot.error = DeadlockError(
                        f"{kind} in group {key[0]} timed out after {self.timeout}s "
                        f"with {slot.count}/{n} participants")
                    self._cond.notify_all()
                    break
                self._cond.wait(remaining)
            if slot.error is not None:
                raise DeadlockError(str(slot.error))
            if slot.count < n:
                raise RankAborted("another rank failed") from self._aborted
            data = slot.deposits
            slot.readers += 1
            if slot.readers == n:
                del self._slots[key]
            return data


class Comm:
    """One rank's view of a group of ranks.

    ``members`` are world ranks; ``rank`` is this rank's index among them.
    Sub-communicators share the rank's counters and call sequence numbers.
    """

    def __init__(self, transport: Transport, members: tuple, index: int,
                 name: str = "world", counters: Optional[Counters] = None,
                 seqs: Optional[dict] = None):
        self.transport = transport
        self.members = tuple(members)
        self.rank = index
        self.size = len(self.members)
        self.name = name
        self.counters = counters if counters is not None else Counters()
        self._seqs = seqs if seqs is not None else defaultdict(int)

    @classmethod
    def world(cls, transport: Transport, rank: int) -> "Comm":
        return cls(transport, tuple(range(transport.size)), rank)

    @property
    def world_rank(self) -> int:
        return self.members[self.rank]

    def sub(self, members, name: str) -> "Comm":
        members = tuple(members)
        return Comm(self.transport, members, members.index(self.world_rank), name,
                    self.counters, self._seqs)

    def _exchange(self, kind, payload):
        seq = self._seqs[self.members]
        self._seqs[self.members] = seq + 1
        return self.transport.rendezvous((self.members, seq), self.size, self.rank,
                                         kind, payload)

    def _record(self, kind, messages=0, payload=None):
        self.counters.record(self.name, kind, self.size, messages, payload)

    # -- collectives --------------------------------------------------------

    def bcast(self, obj=None, root: int = 0):
        data = self._exchange("broadcast", (root, obj if self.rank == root else None))
        if any(d[0] != root for d in data):
            raise DeadlockError(f"broadcast roots disagree in group {self.members}")
        if self.rank == root:
            self._record("broadcast", self.size - 1, [obj] * (self.size - 1))
        else:
            self._record("broadcast")
        return data[root][1]

    def alltoallv(self, payloads: list) -> list:
        """``payloads[j]`` goes to rank ``j``; returns what each rank sent here."""
        if len(payloads) != self.size:
            raise ArityError(f"alltoallv needs {self.size} payloads, got {len(payloads)}")
        data = self._exchange("alltoallv", list(payloads))
        others = [p for j, p in enumerate(payloads) if j != self.rank]
        self._record("alltoallv", len(others), others)
        return [data[src][self.rank] for src in range(self.size)]

    def reduce(self, value, op: Callable = operator.add, root: int = 0):
        """Fold every rank's value in rank order; result only at ``root``."""
        data = self._exchange("reduce", value)
        self._record("reduce", 0 if self.rank == root else 1, value)
        if self.rank != root:
            return None
        acc = data[0]
        for v in data[1:]:
            acc = op(acc, v)
        return acc

    def allreduce(self, value, op: Callable = operator.add):
        data = self._exchange("allreduce", value)
        self._record("allreduce", self.size - 1, [value] * (self.size - 1))
        acc = data[0]
        for v in data[1:]:
            acc = op(acc, v)
        return acc

    def allgatherv(self, obj) -> list:
        data = self._exchange("allgatherv", obj)
        self._record("allgatherv", self.size - 1, [obj] * (self.size - 1))
        return list(data)

    def gatherv(self, obj, root: int = 0):
        data = self._exchange("gatherv", obj)
        self._record("gatherv", 0 if self.rank == root else 1, obj)
        return list(data) if self.rank == root else None

    def exscan(self, value, op: Callable = operator.add, identity: Any = 0):
        """Fold of the values of lower ranks; rank 0 gets ``identity``."""
        data = self._exchange("exscan", value)
        self._record("exscan", 1 if self.rank < self.size - 1 else 0, value)
        acc = identity
        for v in data[:self.rank]:
            acc = op(acc, v)
        return acc

    def barrier(self) -> None:
        self._exchange("barrier", None)
        self._record("barrier")

    def collective(self, kind: str, *args, **kwargs):
        """Dispatch by collective name (``broadcast``, ``alltoallv``, ...)."""
        fn = {
            "broadcast": self.bcast,
            "alltoallv": self.alltoallv,
            "reduce": self.reduce,
            "allreduce": self.allreduce,
            "allgatherv": self.allgatherv,
            "gatherv": self.gatherv,
            "exscan": self.exscan,
            "barrier": self.barrier,
        }.get(kind)
        if fn is None:
            raise ValueError(f"unknown collective {kind!r}")
        return fn(*args, **kwargs)

    def __repr__(self):
        return f"Comm({self.name}, rank={self.rank}/{self.size})"


def run_spmd(nprocs: int, fn: Callable, *args, timeout: float = DEFAULT_TIMEOUT,
             **kwargs) -> list:
    """Run ``fn(comm, *args, **kwargs)`` on ``nprocs`` ranks; return per-rank results.

    The first genuine exception (not a knock-on abort) is re-raised.
    """
    transport = Transport(nprocs, timeout)
    results = [None] * nprocs
    errors: list = [None] * nprocs

    def target(r):
        try:
            results[r] = fn(Comm.world(transport, r), *args, **kwargs)
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            errors[r] = exc
            transport.abort(exc)

    if nprocs == 1:
        target(0)
    else:
        threads = [threading.Thread(target=target, args=(r,), name=f"rank-{r}",
                                    daemon=True) for r in range(nprocs)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    real = [e for e in errors if e is not None and not isinstance(e, RankAborted)]
    if real:
        primary = [e for e in real if not isinstance(e, DeadlockError)]
        raise (primary or real)[0]
    return results


# -- grids ---------------------------------------------------------------------


class Grid2D:
    """``pr x pc`` overlay on ``comm`` with row-major rank numbering."""

    def __init__(self, comm: Comm, pr: int, pc: int):
        if pr < 1 or pc < 1 or pr * pc != comm.size:
            raise ShapeError(f"grid {pr}x{pc} does not match {comm.size} processes")
        self.comm = comm
        self.pr, self.pc = pr, pc
        self.myrow, self.mycol = divmod(comm.rank, pc)
        m = comm.members
        self.row_comm = comm.sub([m[self.myrow * pc + j] for j in range(pc)], "row")
        self.col_comm = comm.sub([m[i * pc + self.mycol] for i in range(pr)], "col")

    @property
    def size(self) -> int:
        return self.pr * self.pc

    @property
    def square(self) -> bool:
        return self.pr == self.pc

    def rank_of(self, i: int, j: int) -> int:
        return i * self.pc + j

    def coords_of(self, rank: int) -> tuple[int, int]:
        return divmod(rank, self.pc)

    def __repr__(self):
        return f"Grid2D({self.pr}x{self.pc}, at ({self.myrow},{self.mycol}))"


def check_3d_shape(p: int, c: int) -> int:
    """Return the layer side ``sqrt(p/c)`` or raise :class:`ShapeError`."""
    if c < 1 or p % c:
        raise ShapeError(f"p/c = {p}/{c} is not an integer perfect square")
    q = math.isqrt(p // c)
    if q * q != p // c:
        raise ShapeError(f"p/c = {p}/{c} is not an integer perfect square")
    return q


class Grid3D:
    """``c`` layers of ``q x q`` grids.

    ``coords[r]`` gives ``(layer, row, col)`` of rank ``r`` of ``comm``.
    Fiber groups join the ranks sharing ``(row, col)`` ordered by layer.
    """

    def __init__(self, comm: Comm, c: int, coords, variant: str = "regular",
                 subgrid: tuple[int, int] = (1, 1)):
        self.q = check_3d_shape(comm.size, c)
        self.comm = comm
        self.c = c
        self.variant = variant
        self.subgrid = subgrid
        self.coords = [tuple(x) for x in coords]
        self.rank_of = {xyz: r for r, xyz in enumerate(self.coords)}
        if len(self.rank_of) != comm.size:
            raise ShapeError("3D coordinates are not a bijection")
        self.layer, self.row, self.col = self.coords[comm.rank]
        m, q = comm.members, self.q
        layer_members = [m[self.rank_of[(self.layer, i, j)]] for i in range(q)
                         for j in range(q)]
        self.layer_comm = comm.sub(layer_members, "layer")
        self.layer_grid = Grid2D(self.layer_comm, q, q)
        self.fiber_comm = comm.sub([m[self.rank_of[(l, self.row, self.col)]]
                                    for l in range(c)], "fiber")

    @property
    def size(self) -> int:
        return self.comm.size

    def __repr__(self):
        return (f"Grid3D({self.c}x{self.q}x{self.q}, {self.variant}, "
                f"at {(self.layer, self.row, self.col)})")


def _regular_coords(p, c, q):
    per = p // c
    return [(r // per,) + divmod(r % per, q) for r in range(p)]


def make_grid(comm: Comm, shape):
    """``shape=(pr, pc)`` gives a :class:`Grid2D`; an int ``c`` a :class:`Grid3D`.

    The 3D form numbers layers by contiguous rank ranges.
    """
    if isinstance(shape, (tuple, list)):
        return Grid2D(comm, *shape)
    c = int(shape)
    q = check_3d_shape(comm.size, c)
    return Grid3D(comm, c, _regular_coords(comm.size, c, q), "regular")


def square_grid(comm: Comm) -> Grid2D:
    side = math.isqrt(comm.size)
    if side * side != comm.size:
        raise ShapeError(f"{comm.size} processes do not form a square grid")
    return Grid2D(comm, side, side)


def supergrid_blocks(pr: int, pc: int, q: int) -> tuple[int, int]:
    if pr % q or pc % q:
        raise ShapeError(
            f"supergrid conversion needs the layer side {q} to divide the {pr}x{pc} grid")
    return pr // q, pc // q


def grid_convert_2d_to_3d(grid: Grid2D, c: int, variant: str = "regular") -> Grid3D:
    """Reinterpret a 2D grid as ``c x q x q``.

    ``regular``: 2D ranks ``l*p/c .. (l+1)*p/c - 1`` form layer ``l``.
    ``supergrid``: the 2D grid is cut into a ``q x q`` supergrid of
    ``sr x sc`` cells; cell ``(i, j)`` becomes fiber ``(i, j)`` and the cell
    member at ``(a, b)`` goes to layer ``a*sc + b``.  Each fiber then lies in
    one cell of the 2D grid.

    The returned grid carries ``rank_map`` (2D rank -> 3D coordinate).
    """
    p = grid.size
    q = check_3d_shape(p, c)
    if variant == "regular":
        coords = _regular_coords(p, c, q)
        sub = (1, 1)
    elif variant == "supergrid":
        sr, sc = supergrid_blocks(grid.pr, grid.pc, q)
        sub = (sr, sc)
        coords = []
        for r in range(p):
            I, J = grid.coords_of(r)
            coords.append(((I % sr) * sc + (J % sc), I // sr, J // sc))
    else:
        raise ValueError(f"unknown conversion variant {variant!r}")
    g3 = Grid3D(grid.comm, c, coords, variant, sub)
    g3.source = grid
    g3.rank_map = dict(enumerate(g3.coords))
    return g3
