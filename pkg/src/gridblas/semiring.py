"""Semirings and unary operators that parameterize every kernel.

A semiring here is heterogeneous: ``multiply`` maps ``T1 x T2 -> T3`` and
``add`` folds ``T3 x T3 -> T3``.  Sparse containers never store structural
zeros, so kernels call ``multiply`` only on present operands and no
multiplicative annihilator is required.
"""

from __future__ import annotations

import itertools
import math
import operator
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

__all__ = [
    "Semiring",
    "UnaryOp",
    "builtin_semiring",
    "check_semiring_laws",
    "SEMIRING_NAMES",
    "INT64_MAX",
]

INT64_MAX = int(np.iinfo(np.int64).max)


@dataclass(frozen=True)
class Semiring:
    """``(add, multiply, zero)`` with the output value dtype.

    ``dtype`` is the numpy dtype used to store ``T3`` values; user types that
    numpy cannot hold should use ``object``.  ``add_ufunc`` is an optional
    vectorized equivalent of ``add`` used by bulk reductions.
    """

    name: str
    add: Callable[[Any, Any], Any]
    multiply: Callable[[Any, Any], Any]
    zero: Any
    dtype: np.dtype = field(default=np.dtype(object))
    add_ufunc: Optional[np.ufunc] = None

    def __post_init__(self):
        object.__setattr__(self, "dtype", np.dtype(self.dtype))

    @property
    def exact(self) -> bool:
        """True when ``add`` is exactly associative on stored values."""
        return self.dtype.kind != "f" or self.add_ufunc in (np.minimum, np.maximum)

    def fold(self, values):
        """Left fold of ``values`` with ``add``; ``zero`` when empty."""
        it = iter(values)
        try:
            acc = next(it)
        except StopIteration:
            return self.zero
        add = self.add
        for v in it:
            acc = add(acc, v)
        return acc

    def __repr__(self):
        return f"Semiring({self.name!r})"


@dataclass(frozen=True)
class UnaryOp:
    """Named elementwise function.  Predicates return bools."""

    name: str
    apply: Callable[[Any], Any]

    def __call__(self, v):
        return self.apply(v)


def _select2nd(a, b):
    return b


def _pos_min(a, b):
    return a if a <= b else b


_BUILTINS = {
    "plus_times_f64": lambda: Semiring(
        "plus_times_f64", operator.add, operator.mul, 0.0, np.float64, np.add
    ),
    "plus_times_i64": lambda: Semiring(
        "plus_times_i64", operator.add, operator.mul, 0, np.int64, np.add
    ),
    "or_and_bool": lambda: Semiring(
        "or_and_bool", operator.or_, operator.and_, False, np.bool_, np.logical_or
    ),
    "min_plus_f64": lambda: Semiring(
        "min_plus_f64", _pos_min, operator.add, math.inf, np.float64, np.minimum
    ),
    "min_select2nd_i64": lambda: Semiring(
        "min_select2nd_i64", _pos_min, _select2nd, INT64_MAX, np.int64, np.minimum
    ),
}

SEMIRING_NAMES = tuple(_BUILTINS)

# Short aliases accepted on the command line.
_ALIASES = {
    "plus_times": "plus_times_f64",
    "or_and": "or_and_bool",
    "min_plus": "min_plus_f64",
    "min_select2nd": "min_select2nd_i64",
}


def builtin_semiring(name: str) -> Semiring:
    """Return a built-in semiring by name.

    >>> builtin_semiring("min_plus_f64").zero
    inf
    """
    key = _ALIASES.get(name, name)
    try:
        return _BUILTINS[key]()
    except KeyError:
        raise NameError(
            f"unknown semiring {name!r}; expected one of {', '.join(SEMIRING_NAMES)}"
        ) from None


def _default_eq(x, y):
    if isinstance(x, float) or isinstance(y, float):
        if math.isnan(x) or math.isnan(y):
            return False
        return math.isclose(x, y, rel_tol=1e-12, abs_tol=0.0) or x == y
    return x == y


def check_semiring_laws(sr: Semiring, samples, seed: int = 0, eq=None,
                        max_triples: int = 4000) -> list[str]:
    """Check associativity, commutativity and identity of ``add`` on samples.

    Returns a list of human-readable violations; empty means all checked laws
    hold.  All pairs are checked; triples are exhausted when there are at most
    ``max_triples`` of them and sampled (with ``seed``) otherwise.  Float
    comparisons use a 1e-12 relative tolerance unless ``eq`` is given.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("samples must be nonempty")
    eq = eq or _default_eq
    add = sr.add
    report = []
    for x in samples:
        if not eq(add(x, sr.zero), x):
            report.append(f"identity: add({x!r}, zero) != {x!r}")
        if not eq(add(sr.zero, x), x):
            report.append(f"identity: add(zero, {x!r}) != {x!r}")
    for x, y in itertools.combinations(samples, 2):
        if not eq(add(x, y), add(y, x)):
            report.append(f"commutativity: add({x!r}, {y!r}) != add({y!r}, {x!r})")
    n = len(samples)
    if n ** 3 <= max_triples:
        triples = itertools.product(samples, repeat=3)
    else:
        rng = np.random.default_rng(seed)
        picks = rng.integers(0, n, size=(max_triples, 3))
        triples = ((samples[a], samples[b], samples[c]) for a, b, c in picks)
    for x, y, z in triples:
        if not eq(add(add(x, y), z), add(x, add(y, z))):
            report.append(f"associativity: fails on ({x!r}, {y!r}, {z!r})")
    return report
