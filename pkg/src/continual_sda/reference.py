"""From-scratch attention: exact softmax attention and its Nystrom approximation.

These recompute everything for a window and serve as the ground truth the
continual states are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionMismatch, as_matrix, matmul, phi, pinv_iterative, rho, row_scale


@dataclass(frozen=True)
class AttentionInput:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = as_matrix(self.q, "q")
        k = as_matrix(self.k, "k")
        v = as_matrix(self.v, "v")
        if not (q.shape == k.shape == v.shape):
            raise DimensionMismatch(f"q, k, v shapes differ: {q.shape}, {k.shape}, {v.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def d(self) -> int:
        return self.q.shape[1]


def _coerce(x, k=None, v=None) -> AttentionInput:
    if isinstance(x, AttentionInput):
        return x
    return AttentionInput(x, k, v)


def sda_exact(x, k=None, v=None) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d)) V`` without max-subtraction.

    Accepts an :class:`AttentionInput` or the three matrices positionally.
    """
    inp = _coerce(x, k, v)
    a = rho(inp.q, inp.k)
    return matmul(row_scale(a, phi(a)), inp.v)


def landmark_pinv(q_land, k_land, pinv_iters: int = 6, pinv_check: bool = False) -> np.ndarray:
    """``pinv(Gamma_phi)`` for a landmark pair."""
    gamma = rho(q_land, k_land)
    return pinv_iterative(row_scale(gamma, phi(gamma)), pinv_iters, check=pinv_check)


def nystrom_factors(
    inp: AttentionInput, q_land, k_land, pinv_iters: int = 6, pinv_check=False, gamma_pinv=None
):
    """Row-normalised ``B``, ``pinv(Gamma)`` and ``Delta`` of the Nystrom product."""
    b = rho(inp.q, k_land)
    delta = rho(q_land, inp.k)
    b_phi = row_scale(b, phi(b))
    if gamma_pinv is None:
        gamma_pinv = landmark_pinv(q_land, k_land, pinv_iters, pinv_check)
    delta_phi = row_scale(delta, phi(delta))
    return b_phi, gamma_pinv, delta_phi


def sda_nystrom(
    x, q_land, k_land, pinv_iters: int = 6, *, pinv_check: bool = False, gamma_pinv=None
) -> np.ndarray:
    """Nystrom attention ``B_phi pinv(Gamma_phi) Delta_phi V`` for given landmarks.

    Evaluated as ``(B_phi pinv(Gamma_phi)) (Delta_phi V)`` so the largest
    product is n x m times m x d, the same grouping the continual states use.
    The pseudo-inverse residual is only enforced when ``pinv_check`` is set;
    a precomputed ``gamma_pinv`` (frozen landmarks) skips it entirely.
    """
    inp = _coerce(x)
    q_land = as_matrix(q_land, "q_land")
    k_land = as_matrix(k_land, "k_land")
    m = q_land.shape[0]
    if k_land.shape != q_land.shape or q_land.shape[1] != inp.d:
        raise DimensionMismatch(f"landmarks must be m x {inp.d}, got {q_land.shape}, {k_land.shape}")
    if not 1 <= m <= inp.n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={inp.n}")
    b_phi, gamma_pinv, delta_phi = nystrom_factors(
        inp, q_land, k_land, pinv_iters, pinv_check, gamma_pinv
    )
    return matmul(matmul(b_phi, gamma_pinv), matmul(delta_phi, inp.v))


def segment_sizes(n: int, m: int) -> list[int]:
    """Sizes of ``m`` contiguous segments covering ``n`` rows, larger ones first."""
    if m < 1 or m > n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    base, extra = divmod(n, m)
    return [base + 1 if i < extra else base for i in range(m)]


def segment_means(tokens, m: int) -> np.ndarray:
    tokens = as_matrix(tokens, "tokens")
    sizes = segment_sizes(tokens.shape[0], m)
    bounds = np.cumsum([0] + sizes)
    return np.stack([tokens[bounds[i] : bounds[i + 1]].mean(axis=0) for i in range(m)])
