import itertools
import operator

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridblas.comm import (Grid2D, check_3d_shape, grid_convert_2d_to_3d,
                           make_grid, payload_nbytes, run_spmd, square_grid)
from gridblas.errors import ArityError, DeadlockError, ShapeError


def test_broadcast_delivers_root_payload():
    out = run_spmd(3, lambda c: c.bcast([1, 2] if c.rank == 0 else None))
    assert out == [[1, 2]] * 3


def test_exscan_sum():
    out = run_spmd(3, lambda c: c.exscan((3, 1, 2)[c.rank]))
    assert out == [0, 3, 4]


@pytest.mark.parametrize("p", [1, 2, 5])
def test_alltoallv_each_rank_sends_its_id(p):
    out = run_spmd(p, lambda c: c.alltoallv([c.rank] * c.size))
    assert out == [list(range(p))] * p


def test_alltoallv_routes_distinct_payloads():
    out = run_spmd(4, lambda c: c.alltoallv([(c.rank, j) for j in range(4)]))
    for r, got in enumerate(out):
        assert got == [(src, r) for src in range(4)]


def test_reduce_folds_in_rank_order_at_root():
    out = run_spmd(4, lambda c: c.reduce(str(c.rank), operator.add, root=2))
    assert out == [None, None, "0123", None]


def test_allreduce_and_gathers():
    def body(c):
        return c.allreduce(c.rank + 1), c.allgatherv(c.rank * 10), c.gatherv(c.rank)

    out = run_spmd(3, body)
    assert [o[0] for o in out] == [6, 6, 6]
    assert out[1][1] == [0, 10, 20]
    assert out[0][2] == [0, 1, 2] and out[1][2] is None


def test_collective_dispatch_by_name():
    out = run_spmd(2, lambda c: c.collective("exscan", 5))
    assert out == [0, 5]
    with pytest.raises(ValueError):
        run_spmd(1, lambda c: c.collective("scatter"))


def test_wrong_payload_count_is_arity_error():
    with pytest.raises(ArityError):
        run_spmd(3, lambda c: c.alltoallv([0, 1]))


def test_missing_participant_times_out():
    def body(c):
        if c.rank != 1:
            c.barrier()

    with pytest.raises(DeadlockError):
        run_spmd(3, body, timeout=0.3)


def test_mismatched_kinds_detected():
    def body(c):
        return c.barrier() if c.rank == 0 else c.allgatherv(1)

    with pytest.raises(DeadlockError):
        run_spmd(2, body, timeout=2)


def test_failure_in_one_rank_propagates_not_deadlock():
    def body(c):
        if c.rank == 2:
            raise KeyError("boom")
        c.barrier()

    with pytest.raises(KeyError):
        run_spmd(4, body, timeout=5)


def test_counters_record_messages_and_bytes():
    def body(c):
        c.bcast(np.zeros(10) if c.rank == 0 else None)
        c.alltoallv([np.zeros(2, dtype=np.int64)] * c.size)
        return c.counters.snapshot()

    snaps = run_spmd(3, body)
    root = snaps[0][("world", "broadcast")]
    assert root.calls == 1 and root.messages == 2 and root.bytes == 160
    assert snaps[1][("world", "broadcast")].messages == 0
    a2a = snaps[1][("world", "alltoallv")]
    assert a2a.messages == 2 and a2a.bytes == 32 and a2a.group_size == 3


def test_payload_size_estimates():
    assert payload_nbytes(np.zeros(4, np.int32)) == (16, 0)
    assert payload_nbytes(None) == (0, 0)
    assert payload_nbytes([np.zeros(1), 3])[0] == 16


def test_counter_dump_formats():
    snap = run_spmd(2, lambda c: (c.barrier(), c.counters)[1])[0]
    assert "barrier" in snap.dump()
    assert '"kind": "barrier"' in snap.dump("json")


# -- grids ---------------------------------------------------------------------


def test_2d_grid_row_major_and_groups():
    def body(c):
        g = Grid2D(c, 2, 3)
        return (g.myrow, g.mycol, g.row_comm.allgatherv(c.rank),
                g.col_comm.allgatherv(c.rank))

    out = run_spmd(6, body)
    assert out[4][:2] == (1, 1)
    assert out[4][2] == [3, 4, 5]
    assert out[4][3] == [1, 4]


def test_sixteen_ranks_default_to_square_grid():
    out = run_spmd(16, lambda c: (square_grid(c).pr, square_grid(c).pc))
    assert set(out) == {(4, 4)}


def test_bad_2d_shape_raises():
    with pytest.raises(ShapeError):
        run_spmd(6, lambda c: Grid2D(c, 2, 2))
    with pytest.raises(ShapeError):
        run_spmd(6, square_grid)


@pytest.mark.parametrize("p,c,q", [(36, 4, 3), (8, 2, 2), (16, 1, 4), (16, 16, 1)])
def test_feasible_3d_shapes(p, c, q):
    assert check_3d_shape(p, c) == q


@pytest.mark.parametrize("p,c", [(9, 3), (8, 1), (12, 5), (16, 0)])
def test_infeasible_3d_shapes(p, c):
    with pytest.raises(ShapeError, match="perfect square"):
        check_3d_shape(p, c)


def test_36_ranks_four_layers_contiguous():
    def body(c):
        g = make_grid(c, 4)
        return (g.layer, g.row, g.col, g.layer_comm.allgatherv(c.rank),
                g.fiber_comm.allgatherv(c.rank))

    out = run_spmd(36, body)
    for r, (layer, i, j, layer_members, fiber) in enumerate(out):
        assert layer_members == list(range(9 * layer, 9 * layer + 9))
        assert (i, j) == divmod(r % 9, 3)
        assert fiber == [9 * l + r % 9 for l in range(4)]


def _convert(p, shape, c, variant):
    def body(comm):
        g3 = grid_convert_2d_to_3d(Grid2D(comm, *shape), c, variant)
        return g3.coords, g3.fiber_comm.allgatherv(comm.rank), g3.subgrid

    return run_spmd(p, body)


@pytest.mark.parametrize("p,shape,c", [(16, (4, 4), 4), (8, (2, 4), 2), (36, (6, 6), 4),
                                       (16, (4, 4), 16), (16, (4, 4), 1)])
@pytest.mark.parametrize("variant", ["regular", "supergrid"])
def test_conversion_is_a_bijection(p, shape, c, variant):
    coords = _convert(p, shape, c, variant)[0][0]
    q = check_3d_shape(p, c)
    assert sorted(coords) == sorted(itertools.product(range(c), range(q), range(q)))


@pytest.mark.parametrize("p,shape,c", [(16, (4, 4), 4), (36, (6, 6), 4), (64, (8, 8), 16),
                                       (8, (2, 4), 2)])
def test_supergrid_fibers_stay_inside_one_block(p, shape, c):
    out = _convert(p, shape, c, "supergrid")
    sr, sc = out[0][2]
    pc = shape[1]
    for _, fiber, _ in out:
        blocks = {((r // pc) // sr, (r % pc) // sc) for r in fiber}
        assert len(blocks) == 1 and len(fiber) == c


def test_supergrid_needs_divisible_grid():
    with pytest.raises(ShapeError):
        _convert(12, (3, 4), 3, "supergrid")


@settings(max_examples=12, deadline=None)
@given(st.sampled_from([(1, 1), (4, 1), (4, 4), (9, 1), (16, 4), (16, 1)]))
def test_regular_layers_hold_consecutive_ranks(pc):
    p, c = pc
    per = p // c
    coords = _convert(p, (int(np.sqrt(p)),) * 2, c, "regular")[0][0]
    assert all(coords[r][0] == r // per for r in range(p))
