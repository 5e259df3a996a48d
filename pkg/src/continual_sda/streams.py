"""Synthetic token streams and the matrix CSV format."""

from __future__ import annotations

import io
import os

import numpy as np

from .tensor import as_matrix


def generate_stream(seed: int, length: int, d: int):
    """Seeded ``(Q, K, V)`` token streams with entries uniform in [-1, 1].

    With unit-range entries ``|q.k| / sqrt(d) <= sqrt(d)``, so exponentials
    stay finite for every ``d`` below about 500000. Larger inputs must be
    pre-scaled: the continual updates cannot use max-subtraction.

    Tokens are drawn one ``(q, k, v)`` triple at a time, so a longer stream
    with the same seed extends a shorter one instead of reshuffling it.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(length, 3, d))
    return x[:, 0].copy(), x[:, 1].copy(), x[:, 2].copy()


def training_tokens(seed: int, count: int, d: int):
    """Independent ``(Q, K)`` token sets for clustering fixed landmarks."""
    rng = np.random.default_rng([seed, 1])
    return rng.uniform(-1.0, 1.0, size=(count, d)), rng.uniform(-1.0, 1.0, size=(count, d))


class MatrixFormatError(ValueError):
    pass


def format_matrix_csv(a) -> str:
    a = as_matrix(a)
    lines = [f"d={a.shape[1]}"]
    lines += [",".join(format(float(x), ".17g") for x in row) for row in a]
    return "\n".join(lines) + "\n"


def write_matrix_csv(target, a) -> None:
    """Write ``a`` as ``d=<cols>`` followed by one 17-significant-digit row per token."""
    text = format_matrix_csv(a)
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", newline="") as fh:
            fh.write(text)
    else:
        target.write(text)


def parse_matrix_csv(text: str) -> np.ndarray:
    lines = [ln.strip() for ln in io.StringIO(text) if ln.strip()]
    if not lines or not lines[0].startswith("d="):
        raise MatrixFormatError("missing 'd=<cols>' header")
    try:
        d = int(lines[0][2:])
    except ValueError as exc:
        raise MatrixFormatError(f"bad header {lines[0]!r}") from exc
    if d < 1:
        raise MatrixFormatError(f"bad column count {d}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != d:
            raise MatrixFormatError(f"line {lineno}: expected {d} values, got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise MatrixFormatError(f"line {lineno}: {exc}") from exc
    if not rows:
        raise MatrixFormatError("no data rows")
    a = np.array(rows, dtype=np.float64)
    if not np.isfinite(a).all():
        raise MatrixFormatError("non-finite value in matrix")
    return a


def read_matrix_csv(path) -> np.ndarray:
    with open(path) as fh:
        return parse_matrix_csv(fh.read())
