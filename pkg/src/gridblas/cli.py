"""Command-line front end: one invocation launches one simulated grid."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import warnings

import numpy as np

from . import algorithms as alg_mod
from .comm import Grid2D, check_3d_shape, grid_convert_2d_to_3d, run_spmd
from .distkernels import (KernelStats, batched_spgemm, ca3d_spgemm, dist_spmm,
                          dist_spmspv, dist_spmv, measure, summa2d_spgemm)
from .distobj import (DistDenseMat, DistDenseVec, DistSparseVec, gather_matrix,
                      redistribute_2d, redistribute_3d)
from .errors import (ArityError, BudgetError, DeadlockError, DimError, FormatError,
                     IoError, ShapeError, StochasticityError)
from .io import (read_binary, read_labeled_tuples, read_matrix_market, write_binary,
                 write_matrix_market)
from .kernels import local_spgemm, local_spmv
from .localmat import LocalSparseVec, build_dcsc, from_canonical
from .semiring import builtin_semiring, check_semiring_laws

SUBCOMMANDS = ("spgemm", "spmv", "spmspv", "spmm", "bfs", "cc", "pagerank",
               "mcl-step", "gen-rmat", "convert", "check")

DEFAULT_SEMIRING = {
    "spgemm": "plus_times", "spmv": "plus_times", "spmspv": "plus_times",
    "spmm": "plus_times", "mcl-step": "plus_times", "bfs": "or_and",
    "cc": "min_select2nd", "check": "plus_times",
}

USAGE_ERRORS = (ShapeError, DimError, ArityError, NameError)
DATA_ERRORS = (FormatError, IoError, IndexError, StochasticityError, BudgetError,
               DeadlockError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _grid_shape(text):
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like RxC, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gridblas", description="Distributed sparse linear algebra on a "
                "simulated process grid.")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--input")
    p.add_argument("--input-b")
    p.add_argument("--format", choices=("mm", "label", "bin"), default=None,
                   help="input format (default: from the file extension, else mm)")
    p.add_argument("--output")
    p.add_argument("--output-format", choices=("mm", "bin"), default=None)
    p.add_argument("--procs", type=int, default=1)
    p.add_argument("--grid", type=_grid_shape)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--conv", choices=("regular", "supergrid"), default="regular")
    p.add_argument("--alg", choices=("heap", "hash", "hybrid", "spa", "bucket"))
    p.add_argument("--semiring")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=1)
    batch = p.add_mutually_exclusive_group()
    batch.add_argument("--batches", type=int)
    batch.add_argument("--budget", type=int)
    p.add_argument("--damping", type=float, default=0.85)
    p.add_argument("--inflation", type=float, default=2.0)
    p.add_argument("--prune", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--stats", choices=("text", "json"), default="text")
    # Inputs generated when --input is absent, and per-command extras.
    p.add_argument("--scale", type=int, default=8)
    p.add_argument("--edge-factor", type=int, default=16)
    p.add_argument("--square", action="store_true", help="multiply A by itself")
    p.add_argument("--root", type=int, default=0)
    p.add_argument("--density", type=float, default=0.01)
    p.add_argument("--k", type=int, default=4, help="dense columns for spmm")
    p.add_argument("--normalize", action="store_true",
                   help="make the mcl-step input column stochastic first")
    p.add_argument("--timeout", type=float, default=60.0)
    return p


def _validate(cfg):
    if cfg.procs < 1 or cfg.threads < 1:
        raise UsageError("--procs and --threads must be positive")
    if cfg.grid is None:
        side = math.isqrt(cfg.procs)
        while cfg.procs % side:
            side -= 1
        cfg.grid = (side, cfg.procs // side)
    if cfg.grid[0] * cfg.grid[1] != cfg.procs:
        raise ShapeError(f"grid {cfg.grid[0]}x{cfg.grid[1]} does not hold {cfg.procs} processes")
    if cfg.layers < 1:
        raise UsageError("--layers must be positive")
    if cfg.layers > 1:
        check_3d_shape(cfg.procs, cfg.layers)
    if cfg.command == "gen-rmat" and not cfg.output:
        raise UsageError("gen-rmat needs --output")
    if cfg.command == "convert" and not (cfg.input and cfg.output):
        raise UsageError("convert needs --input and --output")
    if cfg.semiring is None:
        cfg.semiring = DEFAULT_SEMIRING.get(cfg.command, "plus_times")
    builtin_semiring(cfg.semiring)


def _format_of(path, explicit):
    if explicit:
        return explicit
    ext = os.path.splitext(path)[1].lower()
    return {".bin": "bin", ".txt": "label", ".tsv": "label"}.get(ext, "mm")


def _load(cfg, grid, path):
    fmt = _format_of(path, cfg.format)
    if fmt == "mm":
        return read_matrix_market(path, grid)
    if fmt == "bin":
        return read_binary(path, grid)
    return read_labeled_tuples(path, grid, shared_labels=True)[0]


def _save(cfg, A, path):
    fmt = cfg.output_format or ("bin" if path.endswith(".bin") else "mm")
    (write_binary if fmt == "bin" else write_matrix_market)(A, path)


def _save_vector(comm, values, path):
    if comm.rank == 0:
        with open(path, "w") as f:
            f.writelines(f"{v!r}\n" if isinstance(v, float) else f"{v}\n"
                         for v in values.tolist())


def _input_matrix(cfg, grid, stats):
    with measure(grid.comm, stats, "read"):
        if cfg.input:
            return _load(cfg, grid, cfg.input)
        params = alg_mod.RmatParams(cfg.scale, cfg.edge_factor, seed=cfg.seed)
        return alg_mod.gen_rmat(params, grid)


def _as_dtype(A, sr):
    if sr.dtype == object or A.local.vals.dtype == sr.dtype:
        return A
    loc = A.local
    return A.with_local(from_canonical(type(loc), loc.rowids, loc.col_indices(),
                                       loc.vals.astype(sr.dtype), loc.nrows, loc.ncols))


def _seeded(cfg, salt):
    return np.random.Generator(np.random.Philox(key=np.array([cfg.seed, salt],
                                                               dtype=np.uint64)))


def _worker(comm, cfg):
    grid = Grid2D(comm, *cfg.grid)
    phases = []

    def phase(name):
        st = KernelStats(phase=name)
        phases.append(st)
        return st

    result = {}
    cmd = cfg.command
    sr = builtin_semiring(cfg.semiring)
    if cmd == "gen-rmat":
        st = phase("generate")
        with measure(comm, st, "generate"):
            A = alg_mod.gen_rmat(alg_mod.RmatParams(cfg.scale, cfg.edge_factor,
                                                    seed=cfg.seed), grid)
        st.nnz_out = A.local.nnz
        with measure(comm, phase("write"), "write"):
            _save(cfg, A, cfg.output)
        result.update(n=A.n, nnz=A.nnz())
        return result, [s.as_dict() for s in phases]

    A = _input_matrix(cfg, grid, phase("read"))
    result.update(m=A.m, n=A.n, nnz=A.nnz())

    if cmd == "spgemm":
        A = _as_dtype(A, sr)
        if cfg.input_b and not cfg.square:
            with measure(comm, phase("read"), "read"):
                B = _as_dtype(_load(cfg, grid, cfg.input_b), sr)
        else:
            B = A
        st = phase("spgemm")
        alg = cfg.alg or "hybrid"
        if cfg.layers > 1:
            if cfg.batches or cfg.budget:
                raise UsageError("batching is available for 2D runs only")
            g3 = grid_convert_2d_to_3d(grid, cfg.layers, cfg.conv)
            with measure(comm, st, "spgemm"):
                A3 = redistribute_3d(A, g3, "cols")
                B3 = redistribute_3d(B, g3, "rows")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                C3 = ca3d_spgemm(A3, B3, sr, alg, cfg.threads, st)
            with measure(comm, st, "spgemm"):
                C = redistribute_2d(C3, grid)
            result["stages_per_layer"] = g3.q
        elif cfg.batches or cfg.budget:
            slabs = batched_spgemm(A, B, sr, plan=cfg.batches, budget=cfg.budget,
                                   local_alg=alg, threads=cfg.threads, stats=st)
            result["batches"] = len(slabs)
            C = slabs[0].with_local(_stack_slabs([s.local for s in slabs], sr))
            result["stages_per_layer"] = grid.pr
        else:
            C = summa2d_spgemm(A, B, sr, alg, cfg.threads, st)
            result["stages_per_layer"] = grid.pr
        result["nnz_out"] = C.nnz()
        if cfg.output:
            with measure(comm, phase("write"), "write"):
                _save(cfg, C, cfg.output)
    elif cmd in ("spmv", "spmspv", "spmm"):
        A = _as_dtype(A, sr)
        rng = _seeded(cfg, 7)
        st = phase(cmd)
        if cmd == "spmv":
            x = rng.integers(0, 10, A.n).astype(sr.dtype)
            y = dist_spmv(A, DistDenseVec.from_global(grid, x), sr, "row", cfg.threads, st)
            out = y.gather()
            result["sum"] = _scalar(sr.fold(out.tolist()))
        elif cmd == "spmspv":
            mask = rng.random(A.n) < cfg.density
            vals = rng.integers(1, 10, int(mask.sum())).astype(sr.dtype)
            x = LocalSparseVec(np.flatnonzero(mask), vals, A.n)
            y = dist_spmspv(A, DistSparseVec.from_global(grid, x), sr, cfg.alg or "spa",
                            cfg.threads, st)
            g = y.gather()
            out = g.to_dense(zero=sr.zero, dtype=sr.dtype)
            result["x_nnz"] = x.nnz
            result["y_nnz"] = g.nnz
        else:
            X = rng.integers(0, 10, (A.n, cfg.k)).astype(sr.dtype)
            Y = dist_spmm(A, DistDenseMat.from_global(grid, X), sr, cfg.threads, st)
            out = Y.gather()
            result["shape"] = list(out.shape)
        if cfg.output:
            if comm.rank == 0:
                np.savetxt(cfg.output, np.atleast_2d(out.T).T, fmt="%r" if sr.dtype.kind == "f" else "%d")
    elif cmd == "bfs":
        st = phase("bfs")
        with measure(comm, st, "bfs"):
            levels = alg_mod.bfs(A, cfg.root, cfg.alg or "spa", cfg.threads).gather()
        result.update(reached=int((levels >= 0).sum()), depth=int(levels.max()))
        if cfg.output:
            _save_vector(comm, levels, cfg.output)
    elif cmd == "cc":
        st = phase("cc")
        with measure(comm, st, "cc"):
            res = alg_mod.fastsv_cc(A, threads=cfg.threads)
        labels = res.labels.gather()
        result.update(components=res.ncomponents, iterations=res.iterations)
        if cfg.output:
            _save_vector(comm, labels, cfg.output)
    elif cmd == "pagerank":
        st = phase("pagerank")
        seen = []
        with measure(comm, st, "pagerank"):
            x = alg_mod.pagerank(A, cfg.damping, cfg.tol, cfg.max_iters, cfg.threads,
                                 on_iteration=lambda k, _: seen.append(k)).gather()
        result.update(iterations=len(seen), sum=float(x.sum()), top=int(np.argmax(x)))
        if cfg.output:
            _save_vector(comm, x, cfg.output)
    elif cmd == "mcl-step":
        A = _as_dtype(A, builtin_semiring("plus_times_f64"))
        if cfg.normalize:
            A = alg_mod.normalize_columns(A)
        st = phase("mcl-step")
        with measure(comm, st, "mcl-step"):
            C = alg_mod.mcl_step(A, cfg.inflation, cfg.prune, cfg.layers, cfg.conv,
                                 cfg.alg or "hybrid", cfg.threads)
        st.nnz_out = C.local.nnz
        result["nnz_out"] = C.nnz()
        if cfg.output:
            _save(cfg, C, cfg.output)
    elif cmd == "convert":
        if cfg.layers > 1:
            g3 = grid_convert_2d_to_3d(grid, cfg.layers, cfg.conv)
            with measure(comm, phase("convert"), "convert"):
                A3 = redistribute_3d(A, g3, "cols")
            same = _same_matrix(gather_matrix(A, None), gather_matrix(A3, None))
            result["layout_3d_ok"] = same
        with measure(comm, phase("write"), "write"):
            _save(cfg, A, cfg.output)
    elif cmd == "check":
        result["checks"] = _run_checks(cfg, grid, A, sr)
    return result, [s.as_dict() for s in phases]


def _scalar(v):
    return v.item() if isinstance(v, np.generic) else v


def _stack_slabs(locals_, sr):
    rows = np.concatenate([b.rowids.astype(np.int64) for b in locals_])
    cols = np.concatenate([b.col_indices() for b in locals_])
    vals = np.concatenate([b.vals for b in locals_])
    order = np.lexsort((rows, cols))
    first = locals_[0]
    return from_canonical(type(first), rows[order], cols[order], vals[order],
                          first.nrows, first.ncols)


def _same_matrix(a, b):
    return (a.shape == b.shape and np.array_equal(a.rows, b.rows)
            and np.array_equal(a.cols, b.cols) and a.vals.tolist() == b.vals.tolist())


def _run_checks(cfg, grid, A, sr):
    """Invariant checks on one input; returns ``{name: bool}`` (collective)."""
    comm = grid.comm
    checks = {}
    A = _as_dtype(A, sr)
    full = gather_matrix(A, None)
    local = build_dcsc(full)
    checks["canonical_order"] = bool(np.all(
        (np.diff(full.cols) > 0) | ((np.diff(full.cols) == 0) & (np.diff(full.rows) > 0))))
    sample = full.vals[:16].tolist() or [sr.zero]
    checks["semiring_laws"] = not check_semiring_laws(sr, sample)
    x = _seeded(cfg, 3).integers(0, 10, A.n).astype(sr.dtype)
    y = dist_spmv(A, DistDenseVec.from_global(grid, x), sr).gather()
    checks["spmv_matches_local"] = y.tolist() == local_spmv(local, x, sr).tolist()
    if A.m == A.n and grid.square:
        C = gather_matrix(summa2d_spgemm(A, A, sr), None)
        ref = local_spgemm(local, local, sr).to_triples()
        checks["spgemm_matches_local"] = (
            np.array_equal(C.rows, ref.rows) and np.array_equal(C.cols, ref.cols)
            and np.allclose(C.vals.astype(float), ref.vals.astype(float), rtol=1e-12))
    path = None
    if comm.rank == 0:
        fd, path = tempfile.mkstemp(suffix=".mtx")
        os.close(fd)
    path = comm.bcast(path, root=0)
    try:
        write_matrix_market(A, path)
        back = gather_matrix(read_matrix_market(path, grid), None)
        checks["matrix_market_round_trip"] = (
            np.array_equal(back.rows, full.rows) and np.array_equal(back.cols, full.cols)
            and np.array_equal(back.vals.astype(float), full.vals.astype(float)))
    finally:
        comm.barrier()
        if comm.rank == 0:
            os.unlink(path)
    return checks


def _merge_phase_stats(per_rank):
    """Sum traffic, flops and nnz over ranks; seconds is the slowest rank."""
    merged = []
    for dicts in zip(*per_rank):
        out = {"phase": dicts[0]["phase"], "seconds": max(d["seconds"] for d in dicts),
               "bytes_by_collective": {}, "flops": 0, "nnz_out": 0,
               "stages": dicts[0]["stages"]}
        for d in dicts:
            out["flops"] += d["flops"]
            out["nnz_out"] += d["nnz_out"]
            for k, v in d["bytes_by_collective"].items():
                out["bytes_by_collective"][k] = out["bytes_by_collective"].get(k, 0) + v
        merged.append(out)
    return merged


def _report(cfg, result, phases) -> str:
    total = {"phase": "total", "seconds": sum(p["seconds"] for p in phases),
             "bytes_by_collective": {}, "flops": sum(p["flops"] for p in phases),
             "nnz_out": next((p["nnz_out"] for p in reversed(phases) if p["nnz_out"]), 0)}
    for p in phases:
        for k, v in p["bytes_by_collective"].items():
            total["bytes_by_collective"][k] = total["bytes_by_collective"].get(k, 0) + v
    if cfg.stats == "json":
        doc = dict(total, command=cfg.command, procs=cfg.procs,
                   grid=list(cfg.grid), layers=cfg.layers, phases=phases, result=result)
        return json.dumps(doc, sort_keys=True, default=_scalar)
    lines = [f"{cfg.command} on {cfg.procs} processes "
             f"({cfg.grid[0]}x{cfg.grid[1]}, layers={cfg.layers})"]
    for k, v in result.items():
        lines.append(f"{k}: {v}")
    for p in phases:
        traffic = ", ".join(f"{k}={v}" for k, v in sorted(p["bytes_by_collective"].items()))
        lines.append(f"phase {p['phase']}: {p['seconds']:.4f}s flops={p['flops']} "
                     f"nnz_out={p['nnz_out']} bytes[{traffic or 'none'}]")
    return "\n".join(lines)


def run_cli(argv=None, out=None, err=None) -> int:
    """Parse ``argv``, run the command and return the exit code."""
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        cfg = build_parser().parse_args(argv)
        _validate(cfg)
        outputs = run_spmd(cfg.procs, _worker, cfg, timeout=cfg.timeout)
    except UsageError as exc:
        print(f"usage error: {exc}", file=err)
        return 1
    except USAGE_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=err)
        return 1
    except DATA_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=err)
        return 2
    except (ValueError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=err)
        return 2
    result = outputs[0][0]
    phases = _merge_phase_stats([o[1] for o in outputs])
    print(_report(cfg, result, phases), file=out)
    if cfg.command == "check" and not all(result["checks"].values()):
        return 2
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
