"""Distributed sparse matrix algebra over arbitrary semirings.

Processes are simulated as threads sharing one address space; every
distributed routine is collective over the ranks of its grid.
"""

from .algorithms import (CcResult, RmatParams, bfs, fastsv_cc, gen_rmat, mcl_step,
                         pagerank)
from .comm import (Comm, Counters, Grid2D, Grid3D, grid_convert_2d_to_3d, make_grid,
                   run_spmd)
from .distkernels import (BatchPlan, KernelStats, batched_spgemm, ca3d_spgemm,
                          dist_spmm, dist_spmspv, dist_spmv, plan_batches,
                          summa2d_spgemm, vec_assign, vec_assign_extract, vec_extract)
from .distobj import (DistDenseMat, DistDenseVec, DistSparseMat2D, DistSparseMat3D,
                      DistSparseVec, Partition, VectorLayout, distribute_triples,
                      gather_matrix, random_permute, redistribute_3d, vector_layout)
from .errors import (ArityError, BudgetError, DeadlockError, DimError, FormatError,
                     GridBlasError, IndexWidthError, IoError, ShapeError,
                     StochasticityError)
from .io import (LabelMap, read_binary, read_labeled_tuples, read_matrix_market,
                 write_binary, write_matrix_market)
from .kernels import (estimate_flops, local_spgemm, local_spmm, local_spmspv,
                      local_spmv, symbolic_nnz)
from .localmat import (CscMatrix, DcscMatrix, IndexWidths, LocalSparseVec, Triples,
                       build_csc, build_dcsc)
from .semiring import Semiring, UnaryOp, builtin_semiring, check_semiring_laws

__version__ = "0.1.0"
