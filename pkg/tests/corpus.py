"""Deterministic Matrix Market and label-format files for reader tests."""

import numpy as np


def _mm_text(rng, k):
    field = ("real", "integer", "pattern")[k % 3]
    symmetric = k % 4 == 1
    m = int(rng.integers(1, 40))
    n = m if symmetric else int(rng.integers(1, 40))
    count = int(rng.integers(0, 3 * max(m, n)))
    lines = [f"%%MatrixMarket matrix coordinate {field} "
             f"{'symmetric' if symmetric else 'general'}"]
    for c in range(k % 3):
        lines.append(f"% comment {c} " + "x" * int(rng.integers(0, 80)))
    if k % 5 == 0:
        lines.append("")
    lines.append(f"{m} {n} {count}")
    for _ in range(count):
        i, j = int(rng.integers(1, m + 1)), int(rng.integers(1, n + 1))
        if symmetric and j > i:
            i, j = j, i
        pad = " " * int(rng.integers(1, 4))
        if field == "pattern":
            lines.append(f"{i}{pad}{j}")
        elif field == "integer":
            lines.append(f"{i}{pad}{j}{pad}{int(rng.integers(-1000, 1000))}")
        else:
            lines.append(f"{i}{pad}{j}{pad}{float(rng.standard_normal() * 10.0 ** rng.integers(-5, 6))!r}")
        if rng.random() < 0.05:
            lines.append("% interleaved comment")
    return "\n".join(lines) + "\n"


def matrix_market_corpus(directory, count=20, seed=2024):
    """Write ``count`` files covering comments, symmetric and pattern variants."""
    rng = np.random.default_rng(seed)
    paths = []
    for k in range(count):
        path = directory / f"m{k:02d}.mtx"
        path.write_text(_mm_text(rng, k))
        paths.append(path)
    return paths


def label_file(directory, nlines=300, nlabels=60, seed=7, name="labels.txt"):
    """Random ``row col value`` lines over string and wide-integer labels."""
    rng = np.random.default_rng(seed)
    pool = [f"v{int(x)}" for x in rng.integers(0, 10**9, nlabels // 2)]
    pool += [str(int(x)) for x in rng.integers(0, 10**12, nlabels - len(pool))]
    lines = []
    for _ in range(nlines):
        a, b = rng.choice(pool, 2)
        if rng.random() < 0.2:
            lines.append(f"{a}\t{b}")
        else:
            lines.append(f"{a} {b} {int(rng.integers(1, 50)) / 4}")
    path = directory / name
    path.write_text("\n".join(lines) + "\n")
    return path


def parse_labels(path):
    """Reference: ``{(row label, col label): summed value}``."""
    out = {}
    for line in open(path):
        parts = line.split()
        if not parts:
            continue
        v = float(parts[2]) if len(parts) > 2 else 1.0
        out[(parts[0], parts[1])] = out.get((parts[0], parts[1]), 0.0) + v
    return out
