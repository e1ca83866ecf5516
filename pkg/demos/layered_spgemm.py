"""How many bytes does each process move when squaring a graph?

Squares an R-MAT graph on 64 simulated processes, first with plain 2D SUMMA
and then with the layered algorithm at 4 layers, using both ways of turning
the 2D grid into a 3D one. Every run prints the per-process traffic split by
communicator, so you can see the row/column broadcasts shrink as layers are
added while a small fiber exchange appears.

    python3 demos/layered_spgemm.py [scale]
"""

import sys
import warnings

from gridblas.algorithms import RmatParams, gen_rmat
from gridblas.comm import Grid2D, grid_convert_2d_to_3d, run_spmd
from gridblas.distkernels import ca3d_spgemm, summa2d_spgemm
from gridblas.distobj import gather_matrix, random_permute, redistribute_3d
from gridblas.semiring import builtin_semiring

SR = builtin_semiring("plus_times_f64")


def traffic(comm):
    by_group = {}
    for (group, _), entry in comm.counters.snapshot().items():
        by_group[group] = by_group.get(group, 0) + entry.bytes
    return by_group


def square(comm, scale, layers, variant):
    g = Grid2D(comm, 8, 8)
    A, _, _ = random_permute(gen_rmat(RmatParams(scale, seed=1), g), seed=1)
    if layers == 1:
        comm.counters.reset()
        C = summa2d_spgemm(A, A, SR)
    else:
        g3 = grid_convert_2d_to_3d(g, layers, variant)
        A3 = redistribute_3d(A, g3, "cols")
        B3 = redistribute_3d(A, g3, "rows")
        comm.counters.reset()
        C = ca3d_spgemm(A3, B3, SR)
    moved = traffic(comm)
    return moved, gather_matrix(C, 0)


def main():
    scale = int(sys.argv[1]) if len(sys.argv) > 1 else 9
    print(f"C = A*A for an R-MAT graph with 2^{scale} vertices on 64 processes\n")
    reference = None
    for layers, variant in [(1, "-"), (4, "regular"), (4, "supergrid")]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out = run_spmd(64, square, scale, layers, variant)
        C = out[0][1]
        if reference is None:
            reference = C
        same = (C.rows.tolist(), C.cols.tolist()) == (reference.rows.tolist(),
                                                      reference.cols.tolist())
        mean = {}
        for moved, _ in out:
            for group, b in moved.items():
                mean[group] = mean.get(group, 0) + b / len(out)
        parts = ", ".join(f"{grp} {b / 1024:8.1f} KiB" for grp, b in sorted(mean.items()))
        print(f"layers={layers} {variant:9s} nnz(C)={C.nnz:7d} same pattern={same}")
        print(f"    mean bytes per process: {parts}")


if __name__ == "__main__":
    main()
