import warnings

import numpy as np
import pytest

from conftest import SEMIRING_DTYPES, VALUE_KIND, entries_of, local_of, triples_of
from gridblas.comm import Grid2D, grid_convert_2d_to_3d, run_spmd
from gridblas.distkernels import (BatchPlan, KernelStats, batched_spgemm, ca3d_spgemm,
                                  column_bytes, dist_spmm, dist_spmspv, dist_spmv,
                                  even_batches, plan_batches, summa2d_spgemm,
                                  vec_assign, vec_assign_extract, vec_extract)
from gridblas.distobj import (DistDenseMat, DistDenseVec, DistSparseVec,
                              distribute_triples, gather_matrix, random_permute,
                              redistribute_3d)
from gridblas.errors import BudgetError, DimError, ShapeError
from gridblas.kernels import local_spgemm, local_spmv, symbolic_nnz
from gridblas.localmat import LocalSparseVec
from gridblas.semiring import builtin_semiring
from oracles import random_entries, semiring_product, spmv

EXACT = ["plus_times_i64", "or_and_bool", "min_plus_f64"]


def _pair(seed, name, m=16, k=16, n=16, density=0.2):
    rng = np.random.default_rng(seed)
    kind, dt = VALUE_KIND[name], SEMIRING_DTYPES[name]
    a, b = random_entries(rng, m, k, density, kind), random_entries(rng, k, n, density, kind)
    return a, b, triples_of(a, m, k, dt), triples_of(b, k, n, dt)


def _summa(p, name, seed):
    a, b, ta, tb = _pair(seed, name)
    sr = builtin_semiring(name)
    side = int(np.sqrt(p))

    def body(comm):
        g = Grid2D(comm, side, side)
        stats = KernelStats()
        C = summa2d_spgemm(distribute_triples(ta, g, replicated=True),
                           distribute_triples(tb, g, replicated=True), sr, stats=stats)
        return (entries_of(gather_matrix(C, None)), stats,
                comm.counters.calls("broadcast", "row"), comm.counters.calls("broadcast", "col"))

    return a, b, sr, run_spmd(p, body)


@pytest.mark.parametrize("name", EXACT)
@pytest.mark.parametrize("p", [1, 4, 9, 16])
def test_summa_matches_serial(p, name):
    a, b, sr, out = _summa(p, name, seed=p)
    serial = entries_of(local_spgemm(local_of(a, 16, 16, SEMIRING_DTYPES[name]),
                                     local_of(b, 16, 16, SEMIRING_DTYPES[name]), sr))
    assert serial == semiring_product(a, b, sr.add, sr.multiply)
    assert all(o[0] == serial for o in out)


@pytest.mark.parametrize("p", [1, 4, 9, 16])
def test_summa_runs_sqrt_p_stages(p):
    _, _, _, out = _summa(p, "plus_times_i64", seed=0)
    side = int(np.sqrt(p))
    for _, stats, row_bcasts, col_bcasts in out:
        assert stats.stages == side
        assert row_bcasts == side and col_bcasts == side


def test_summa_rejects_bad_shapes():
    _, _, ta, tb = _pair(0, "plus_times_i64", 6, 5, 6)
    sr = builtin_semiring("plus_times_i64")
    with pytest.raises(ShapeError):
        run_spmd(2, lambda c: summa2d_spgemm(
            distribute_triples(ta, Grid2D(c, 1, 2), replicated=True),
            distribute_triples(ta, Grid2D(c, 1, 2), replicated=True), sr))
    with pytest.raises(DimError):
        run_spmd(4, lambda c: summa2d_spgemm(
            distribute_triples(ta, Grid2D(c, 2, 2), replicated=True),
            distribute_triples(ta, Grid2D(c, 2, 2), replicated=True), sr))


def _ca3d(p, shape, c, variant, name, seed):
    a, b, ta, tb = _pair(seed, name)
    sr = builtin_semiring(name)

    def body(comm):
        g = Grid2D(comm, *shape)
        g3 = grid_convert_2d_to_3d(g, c, variant)
        A3 = redistribute_3d(distribute_triples(ta, g, replicated=True), g3, "cols")
        B3 = redistribute_3d(distribute_triples(tb, g, replicated=True), g3, "rows")
        comm.counters.reset()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            C3 = ca3d_spgemm(A3, B3, sr)
        snap = comm.counters.snapshot()
        same_slabs = np.array_equal(C3.row_cells, A3.row_cells) and C3.split_dim == "cols"
        return entries_of(gather_matrix(C3, None)), snap, same_slabs

    return semiring_product(a, b, sr.add, sr.multiply), run_spmd(p, body)


CA3D_SHAPES = [(1, (1, 1), 1), (4, (2, 2), 1), (4, (2, 2), 4), (8, (2, 4), 2),
               (16, (4, 4), 4), (16, (4, 4), 1)]


@pytest.mark.parametrize("variant", ["regular", "supergrid"])
@pytest.mark.parametrize("p,shape,c", CA3D_SHAPES)
def test_ca3d_matches_oracle(p, shape, c, variant):
    for name in EXACT:
        ref, out = _ca3d(p, shape, c, variant, name, seed=p + c)
        assert all(o[0] == ref for o in out)
        assert all(o[2] for o in out)


@pytest.mark.parametrize("p,shape,c", [(8, (2, 4), 2), (16, (4, 4), 4)])
def test_ca3d_layer_exchange_is_fiber_alltoall(p, shape, c):
    _, out = _ca3d(p, shape, c, "supergrid", "plus_times_i64", seed=1)
    for _, snap, _ in out:
        cross = {k: e for k, e in snap.items() if k[0] not in ("row", "col")}
        assert set(cross) == {("fiber", "alltoallv")}
        assert cross[("fiber", "alltoallv")].group_size == c
        assert cross[("fiber", "alltoallv")].calls == 1


def test_ca3d_with_one_layer_equals_summa():
    ref, out = _ca3d(4, (2, 2), 1, "regular", "plus_times_i64", seed=7)
    _, _, _, summa = _summa(4, "plus_times_i64", seed=7)
    assert out[0][0] == summa[0][0] == ref


def test_ca3d_warns_when_layers_exceed_cube_root():
    _, _, ta, tb = _pair(3, "plus_times_i64")
    sr = builtin_semiring("plus_times_i64")

    def body(comm):
        g = Grid2D(comm, 2, 2)
        g3 = grid_convert_2d_to_3d(g, 4, "regular")
        A3 = redistribute_3d(distribute_triples(ta, g, replicated=True), g3, "cols")
        B3 = redistribute_3d(distribute_triples(tb, g, replicated=True), g3, "rows")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            ca3d_spgemm(A3, B3, sr)
        return [w.category for w in caught]

    assert all(RuntimeWarning in cats for cats in run_spmd(4, body))


# -- batching ------------------------------------------------------------------


def test_plan_respects_budget_and_covers_columns():
    col = column_bytes([3, 0, 5, 2, 2, 7, 1], np.int64)
    budget = int(col.max()) + 20
    plan = plan_batches(col, budget)
    assert plan.ranges[0][0] == 0 and plan.ranges[-1][1] == 7
    assert all(a[1] == b[0] for a, b in zip(plan.ranges, plan.ranges[1:]))
    assert all(e <= budget for e in plan.est_bytes)
    with pytest.raises(BudgetError):
        plan_batches(col, int(col.max()) - 1)
    with pytest.raises(BudgetError):
        plan_batches(col, 0)


def test_even_batches_partition():
    plan = even_batches(10, 4)
    assert plan.b == 4
    assert sum(e - s for s, e in plan.ranges) == 10


@pytest.mark.parametrize("b", [1, 2, 4, 8])
def test_local_batches_concatenate_to_product(b):
    rng = np.random.default_rng(b)
    sr = builtin_semiring("plus_times_i64")
    A = local_of(random_entries(rng, 30, 30, 0.1), 30, 30, np.int64)
    B = local_of(random_entries(rng, 30, 30, 0.1), 30, 30, np.int64)
    seen = []
    slabs = batched_spgemm(A, B, sr, plan=b, consumer=lambda r, s: seen.append(r) or s)
    assert seen == list(range(b))
    full = local_spgemm(A, B, sr)
    # Slabs keep B's shape; each holds a disjoint set of output columns.
    parts = [entries_of(s) for s in slabs]
    got = {}
    for part in parts:
        assert not got.keys() & part.keys()
        got.update(part)
    assert got == entries_of(full)
    assert all(s.shape == full.shape for s in slabs)


def test_budget_driven_batching_uses_symbolic_sizes():
    rng = np.random.default_rng(0)
    sr = builtin_semiring("plus_times_i64")
    A = local_of(random_entries(rng, 40, 40, 0.15), 40, 40, np.int64)
    B = local_of(random_entries(rng, 40, 40, 0.15), 40, 40, np.int64)
    sizes = column_bytes(symbolic_nnz(A, B), np.int64)
    budget = int(sizes.sum()) // 3 + int(sizes.max())
    plan = plan_batches(sizes, budget)
    assert plan.b >= 2
    slabs = batched_spgemm(A, B, sr, budget=budget)
    assert len(slabs) == plan.b
    assert sum(s.nnz for s in slabs) == local_spgemm(A, B, sr).nnz


def test_distributed_batches_match_summa():
    _, _, ta, tb = _pair(11, "plus_times_i64", 20, 20, 20)
    sr = builtin_semiring("plus_times_i64")

    def body(comm):
        g = Grid2D(comm, 2, 2)
        A = distribute_triples(ta, g, replicated=True)
        B = distribute_triples(tb, g, replicated=True)
        whole = entries_of(gather_matrix(summa2d_spgemm(A, B, sr), None))
        slabs = batched_spgemm(A, B, sr, plan=3)
        got = {}
        for S in slabs:
            got.update(entries_of(gather_matrix(S, None)))
        return whole == got and len(slabs) == 3

    assert all(run_spmd(4, body))


def test_batch_plan_validates_ranges():
    with pytest.raises(ValueError):
        BatchPlan([(0, 3), (4, 6)])


# -- vector kernels ------------------------------------------------------------


GRIDS = [(1, 1), (2, 2), (3, 3), (4, 4), (2, 3)]


@pytest.mark.parametrize("shape", GRIDS)
@pytest.mark.parametrize("name", EXACT)
def test_spmv_matches_serial(shape, name):
    rng = np.random.default_rng(shape[0] * 7 + shape[1])
    sr = builtin_semiring(name)
    dt = SEMIRING_DTYPES[name]
    a = random_entries(rng, 24, 19, 0.2, VALUE_KIND[name])
    x = np.array([random_entries(rng, 1, 1, 1.0, VALUE_KIND[name])[(0, 0)]
                  for _ in range(19)], dtype=dt)
    t = triples_of(a, 24, 19, dt)
    serial = local_spmv(local_of(a, 24, 19, dt), x, sr)

    def body(comm):
        g = Grid2D(comm, *shape)
        y = dist_spmv(distribute_triples(t, g, replicated=True),
                      DistDenseVec.from_global(g, x), sr)
        return y.gather()

    for y in run_spmd(shape[0] * shape[1], body):
        assert y.tolist() == serial.tolist()


@pytest.mark.parametrize("shape", GRIDS)
@pytest.mark.parametrize("f", [0.0, 0.01, 0.1, 0.5])
def test_spmspv_matches_oracle(shape, f):
    rng = np.random.default_rng(int(f * 100) + shape[0])
    sr = builtin_semiring("plus_times_i64")
    a = random_entries(rng, 40, 37, 0.15)
    mask = rng.random(37) < f
    idx = np.flatnonzero(mask)
    vals = rng.integers(1, 9, len(idx))
    ref = spmv(a, dict(zip(idx.tolist(), vals.tolist())), sr.add, sr.multiply)
    t = triples_of(a, 40, 37, np.int64)

    def body(comm):
        g = Grid2D(comm, *shape)
        A = distribute_triples(t, g, replicated=True)
        y = dist_spmspv(A, DistSparseVec.from_global(g, LocalSparseVec(idx, vals, 37)), sr)
        dense = dist_spmv(A, DistDenseVec.from_global(g, np.where(mask, 0, 0) + np.bincount(
            idx, vals, 37).astype(np.int64)), sr).gather()
        return y.gather(), dense

    for y, dense in run_spmd(shape[0] * shape[1], body):
        assert dict(zip(y.idx.tolist(), y.vals.tolist())) == ref
        assert all(dense[i] == v for i, v in ref.items())


def test_spmspv_single_nonzero_selects_column():
    a = {(1, 4): 2, (7, 4): 3, (2, 1): 5}
    t = triples_of(a, 9, 6, np.int64)
    sr = builtin_semiring("plus_times_i64")

    def body(comm):
        g = Grid2D(comm, 2, 2)
        x = DistSparseVec.from_global(g, LocalSparseVec([4], np.array([1]), 6))
        return dist_spmspv(distribute_triples(t, g, replicated=True), x, sr).gather()

    y = run_spmd(4, body)[0]
    assert y.idx.tolist() == [1, 7] and y.vals.tolist() == [2, 3]


def test_spmv_permutation_consistency():
    rng = np.random.default_rng(5)
    sr = builtin_semiring("plus_times_i64")
    a = random_entries(rng, 24, 24, 0.2)
    x = rng.integers(-5, 6, 24)
    t = triples_of(a, 24, 24, np.int64)

    def body(comm):
        g = Grid2D(comm, 2, 2)
        A = distribute_triples(t, g, replicated=True)
        Ap, pr, pc = random_permute(A, 13)
        rowp, colp = pr.gather(), pc.gather()
        xp = np.empty_like(x)
        xp[colp] = x
        y = dist_spmv(A, DistDenseVec.from_global(g, x), sr).gather()
        yp = dist_spmv(Ap, DistDenseVec.from_global(g, xp), sr).gather()
        return y, yp, rowp

    y, yp, rowp = run_spmd(4, body)[0]
    assert yp[rowp].tolist() == y.tolist()


@pytest.mark.parametrize("shape", [(1, 1), (2, 2), (3, 2)])
def test_spmm_matches_oracle_without_sparse_traffic(shape):
    rng = np.random.default_rng(8)
    sr = builtin_semiring("plus_times_i64")
    a = random_entries(rng, 16, 16, 0.2)
    X = rng.integers(-3, 4, (16, 3))
    t = triples_of(a, 16, 16, np.int64)
    dense_a = t.to_dense()

    def body(comm):
        g = Grid2D(comm, *shape)
        A = distribute_triples(t, g, replicated=True)
        comm.counters.reset()
        Y = dist_spmm(A, DistDenseMat.from_global(g, X), sr).gather()
        sparse_bytes = comm.counters.total("sparse_bytes")
        y1 = dist_spmv(A, DistDenseVec.from_global(g, X[:, 0]), sr).gather()
        return Y, sparse_bytes, y1

    for Y, sparse_bytes, y1 in run_spmd(shape[0] * shape[1], body):
        assert np.array_equal(Y, dense_a @ X)
        assert sparse_bytes == 0
        assert Y[:, 0].tolist() == y1.tolist()


def test_vector_kernel_dimension_errors():
    sr = builtin_semiring("plus_times_i64")
    t = triples_of({(0, 0): 1}, 4, 5, np.int64)
    with pytest.raises(DimError):
        run_spmd(4, lambda c: dist_spmv(distribute_triples(t, Grid2D(c, 2, 2), replicated=True),
                                        DistDenseVec.full(Grid2D(c, 2, 2), 4, 0), sr))


# -- assign / extract ----------------------------------------------------------


def test_assign_scatter_example_in_one_alltoallv():
    def body(comm):
        g = Grid2D(comm, 2, 1)
        y = DistDenseVec.full(g, 4, 0, np.int64)
        comm.counters.reset()
        out = vec_assign(y, DistDenseVec.from_global(g, np.array([3, 0])),
                         DistDenseVec.from_global(g, np.array([9, 7]))).gather()
        return out, comm.counters.calls()

    for out, calls in run_spmd(2, body):
        assert out.tolist() == [7, 0, 0, 9]
        assert calls - 1 == 1  # gather for the check adds one allgatherv


def test_extract_uses_request_and_reply_rounds():
    def body(comm):
        g = Grid2D(comm, 2, 2)
        x = DistDenseVec.from_global(g, np.array([5, 8, 1, 4, 2]))
        comm.counters.reset()
        r = vec_extract(x, DistDenseVec.from_global(g, np.array([1, 0, 1])))
        calls = comm.counters.calls("alltoallv", "world")
        return r.gather(), calls

    for r, calls in run_spmd(4, body):
        assert r.tolist() == [8, 5, 8]
        assert calls == 2


@pytest.mark.parametrize("shape", [(1, 1), (2, 2), (3, 2)])
def test_identity_assign_and_extract_copy(shape):
    x = np.arange(11) * 3 + 1

    def body(comm):
        g = Grid2D(comm, *shape)
        xv = DistDenseVec.from_global(g, x)
        ident = DistDenseVec.iota(g, 11)
        y = vec_assign_extract("assign", DistDenseVec.full(g, 11, 0, np.int64), ident, xv)
        r = vec_assign_extract("extract", None, ident, xv)
        return y.gather(), r.gather()

    for y, r in run_spmd(shape[0] * shape[1], body):
        assert y.tolist() == x.tolist() and r.tolist() == x.tolist()


def test_assign_duplicates_last_writer_and_accum():
    def body(comm):
        g = Grid2D(comm, 2, 2)
        ind = DistDenseVec.from_global(g, np.array([2, 2, 0, 2]))
        x = DistDenseVec.from_global(g, np.array([1, 2, 3, 4]))
        y = DistDenseVec.full(g, 4, 10, np.int64)
        return (vec_assign(y, ind, x).gather(),
                vec_assign(y, ind, x, accum=min).gather())

    last, acc = run_spmd(4, body)[0]
    assert last.tolist() == [3, 10, 4, 10]
    assert acc.tolist() == [3, 10, 1, 10]


def test_out_of_range_index_raises():
    with pytest.raises(IndexError):
        run_spmd(1, lambda c: vec_extract(
            DistDenseVec.from_global(Grid2D(c, 1, 1), np.arange(3)),
            DistDenseVec.from_global(Grid2D(c, 1, 1), np.array([3]))))


def test_ca3d_supergrid_realigns_mismatched_inner_cells():
    # On a 2x4 grid the inner dimension 10 is cut 4 ways for A but 2 ways for B,
    # so the supergrid regions differ: [0, 4) [4, 10) against [0, 5) [5, 10).
    a, b, ta, tb = _pair(21, "plus_times_i64", 11, 10, 9)
    sr = builtin_semiring("plus_times_i64")

    def body(comm):
        g = Grid2D(comm, 2, 4)
        g3 = grid_convert_2d_to_3d(g, 2, "supergrid")
        A3 = redistribute_3d(distribute_triples(ta, g, replicated=True), g3, "cols")
        B3 = redistribute_3d(distribute_triples(tb, g, replicated=True), g3, "rows")
        mismatch = not np.array_equal(A3.col_cells, B3.row_cells)
        comm.counters.reset()
        C3 = ca3d_spgemm(A3, B3, sr)
        return mismatch, comm.counters.calls("alltoallv", "world"), \
            entries_of(gather_matrix(C3, None))

    for mismatch, world_calls, got in run_spmd(8, body):
        assert mismatch and world_calls == 1
        assert got == semiring_product(a, b, sr.add, sr.multiply)
