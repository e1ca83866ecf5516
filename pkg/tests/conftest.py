import sys
import numpy as np
import pytest

from gridblas.localmat import Triples, build_dcsc, build_csc
from oracles import entries_to_arrays

SEMIRING_DTYPES = {
    "plus_times_i64": np.int64,
    "plus_times_f64": np.float64,
    "or_and_bool": np.bool_,
    "min_plus_f64": np.float64,
    "min_select2nd_i64": np.int64,
}

VALUE_KIND = {
    "plus_times_i64": "int",
    "plus_times_f64": "float",
    "or_and_bool": "bool",
    "min_plus_f64": "float",
    "min_select2nd_i64": "int",
}


def triples_of(entries, m, n, dtype):
    rows, cols, vals = entries_to_arrays(entries, dtype)
    return Triples(rows, cols, vals, m, n, dtype=dtype)


def local_of(entries, m, n, dtype, fmt="dcsc"):
    t = triples_of(entries, m, n, dtype)
    return build_dcsc(t) if fmt == "dcsc" else build_csc(t)


def entries_of(mat):
    """``{(i, j): value}`` of a local matrix or of gathered triples."""
    t = mat if isinstance(mat, Triples) else mat.to_triples()
    return {(int(r), int(c)): v for r, c, v in zip(t.rows, t.cols, t.vals.tolist())}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
