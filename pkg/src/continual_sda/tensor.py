"""Dense linear-algebra primitives shared by every attention variant.

Matrices are plain ``float64`` numpy arrays. ``rho`` is the unnormalised
softmax kernel ``exp(A B^T / sqrt(d))`` and ``phi`` its row sums; together with
``row_scale`` they split a row-wise softmax into numerator and denominator so
the two halves can be cached and updated separately.

Every primitive reports its element-operation count to the active
:class:`OpCounter` (see :func:`count_ops`), which the tests use to audit the
analytic cost model and to prove that some code paths never call the
pseudo-inverse.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass

import numpy as np


class ConvergenceError(ArithmeticError):
    """Iterative pseudo-inverse did not reach the residual bound."""


class DimensionMismatch(ValueError):
    pass


@dataclass
class OpCounter:
    flops: int = 0
    pinv_calls: int = 0


_counter: contextvars.ContextVar[OpCounter | None] = contextvars.ContextVar(
    "continual_sda_counter", default=None
)


@contextlib.contextmanager
def count_ops():
    """Collect FLOPs and pseudo-inverse calls made inside the block.

    Counters are context-local, so concurrent streams on other threads do not
    leak into each other's totals.
    """
    counter = OpCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


def add_flops(k: int) -> None:
    c = _counter.get()
    if c is not None:
        c.flops += int(k)


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and convert ``x`` to a finite 2-D float64 array."""
    a = np.array(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise DimensionMismatch(f"{name} must be non-empty, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite values")
    return a


def as_vector(x, name: str = "vector") -> np.ndarray:
    a = np.array(x, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] == 0:
        raise DimensionMismatch(f"{name} must be a non-empty 1-D array, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite values")
    return a


def rho(psi: np.ndarray, omega: np.ndarray, d_scale: int | None = None) -> np.ndarray:
    """``exp(psi @ omega.T / sqrt(d_scale))``.

    1-D inputs are treated as single rows and the corresponding axis of the
    result is dropped, so ``rho(q, K)`` is a vector over the rows of ``K``.
    """
    psi = np.asarray(psi, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    d = psi.shape[-1]
    if omega.shape[-1] != d:
        raise DimensionMismatch(f"feature sizes differ: {psi.shape} vs {omega.shape}")
    if d_scale is None:
        d_scale = d
    if d_scale < 1:
        raise ValueError("d_scale must be >= 1")
    with np.errstate(over="ignore"):
        out = np.exp((psi @ omega.T) * (1.0 / math.sqrt(d_scale)))
    if not np.isfinite(out).all():
        raise OverflowError(
            "exp overflow in attention kernel; pre-scale the inputs "
            "(max-subtraction is not available for continual updates)"
        )
    p = psi.shape[0] if psi.ndim == 2 else 1
    q = omega.shape[0] if omega.ndim == 2 else 1
    add_flops(p * q * d + p * q)
    return out


def phi(a: np.ndarray) -> np.ndarray:
    """Row sums."""
    a = np.asarray(a)
    add_flops(a.size)
    return a.sum(axis=-1)


def row_scale(a: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Divide row ``i`` of ``a`` by ``s[i]``.

    Passing ``s = phi(a)`` turns a positive matrix into a row-stochastic one.
    """
    a = np.asarray(a, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if a.ndim != 2 or s.shape != a.shape[:1]:
        raise DimensionMismatch(f"scale of shape {s.shape} does not match rows of {a.shape}")
    if np.any(s == 0.0):
        raise ZeroDivisionError("zero row normaliser (underflowed softmax denominator)")
    add_flops(a.size)
    return a / s[:, None]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    p = a.shape[0] if a.ndim == 2 else 1
    r = b.shape[1] if b.ndim == 2 else 1
    add_flops(p * a.shape[-1] * r)
    return a @ b


def pinv_residual(g: np.ndarray, z: np.ndarray) -> float:
    """``||g z g - g||_F / ||g||_F``."""
    return float(np.linalg.norm(g @ z @ g - g) / np.linalg.norm(g))


def pinv_iterative(
    g: np.ndarray, iterations: int = 6, *, check: bool = True, tol: float = 1e-3
) -> np.ndarray:
    """Moore-Penrose pseudo-inverse by the 7th-order polynomial iteration

        Z <- Z (13 I - gZ (15 I - gZ (7 I - gZ))) / 4

    started from ``Z0 = g^T / (||g||_1 ||g||_inf)``.

    A fixed iteration count only resolves singular values down to roughly
    ``sqrt(||g||_1 ||g||_inf) / 3.25**(iterations/2)``; smaller ones are left
    damped. With ``check`` the residual ``||gZg - g|| / ||g||`` is verified
    against ``tol`` and :class:`ConvergenceError` raised when it is exceeded.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DimensionMismatch(f"pinv_iterative needs a square matrix, got {g.shape}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    c = _counter.get()
    if c is not None:
        c.pinv_calls += 1
    m = g.shape[0]
    eye = np.eye(m)
    norm1 = np.abs(g).sum(axis=0).max()
    norminf = np.abs(g).sum(axis=1).max()
    if norm1 == 0.0:
        return np.zeros_like(g)
    z = g.T / (norm1 * norminf)
    for _ in range(iterations):
        gz = g @ z
        z = 0.25 * (z @ (13.0 * eye - gz @ (15.0 * eye - gz @ (7.0 * eye - gz))))
    add_flops(iterations * (4 * m**3 + 4 * m**2))
    if check:
        res = pinv_residual(g, z)
        if not res <= tol:
            raise ConvergenceError(
                f"pseudo-inverse residual {res:.3e} exceeds {tol:.1e} after {iterations} iterations"
            )
    return z
