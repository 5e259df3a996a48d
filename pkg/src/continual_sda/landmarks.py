"""Landmark selection: the rolling segment-means schedule and m-means clustering."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .reference import segment_means, segment_sizes
from .tensor import DimensionMismatch, as_matrix


@dataclass
class LandmarkPair:
    q_land: np.ndarray
    k_land: np.ndarray

    def __post_init__(self):
        self.q_land = as_matrix(self.q_land, "q_land")
        self.k_land = as_matrix(self.k_land, "k_land")
        if self.q_land.shape != self.k_land.shape:
            raise DimensionMismatch(
                f"landmark shapes differ: {self.q_land.shape} vs {self.k_land.shape}"
            )

    @property
    def m(self) -> int:
        return self.q_land.shape[0]

    @classmethod
    def from_segment_means(cls, q, k, m: int) -> "LandmarkPair":
        return cls(segment_means(q, m), segment_means(k, m))


class LandmarkUpdate(NamedTuple):
    updated: bool
    q_land: np.ndarray | None = None
    k_land: np.ndarray | None = None


@dataclass
class LandmarkSchedule:
    """Tracks which segment the incoming tokens are filling.

    Landmarks form a queue: the oldest is replaced once as many new tokens
    have arrived as the segment it summarised, so with ``n % m != 0`` the
    segment sizes keep cycling in the order they had in the initial window.
    """

    n: int
    m: int
    d: int
    sizes: list[int] = field(default_factory=list)
    phase: int = 0
    next_slot: int = 0
    acc_q: np.ndarray | None = None
    acc_k: np.ndarray | None = None

    def __post_init__(self):
        if not self.sizes:
            self.sizes = segment_sizes(self.n, self.m)
        if self.acc_q is None:
            self.acc_q = np.zeros(self.d)
        if self.acc_k is None:
            self.acc_k = np.zeros(self.d)

    @property
    def current_size(self) -> int:
        return self.sizes[self.next_slot]

    def push(self, q_row, k_row) -> LandmarkUpdate:
        self.acc_q += q_row
        self.acc_k += k_row
        self.phase += 1
        size = self.sizes[self.next_slot]
        if self.phase < size:
            return LandmarkUpdate(False)
        q_new = self.acc_q / size
        k_new = self.acc_k / size
        self.acc_q = np.zeros(self.d)
        self.acc_k = np.zeros(self.d)
        self.phase = 0
        self.next_slot = (self.next_slot + 1) % self.m
        return LandmarkUpdate(True, q_new, k_new)

    def pushes_until_update(self) -> int:
        return self.sizes[self.next_slot] - self.phase


def subsample_tokens(tokens, cap: int, seed: int) -> np.ndarray:
    """Uniform sample of ``cap`` rows without replacement, kept in original order."""
    tokens = as_matrix(tokens, "tokens")
    n = tokens.shape[0]
    if n <= cap:
        return tokens.copy()
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=cap, replace=False))
    return tokens[idx]


def _assign(tokens, centers):
    # one center at a time keeps memory at N x d for large token sets
    d2 = np.stack([((tokens - c) ** 2).sum(axis=1) for c in centers], axis=1)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(tokens.shape[0]), labels]


def lloyd(tokens, centers, max_iters: int = 100):
    """Lloyd iterations from the given centers.

    Returns ``(centers, inertia_history)``. A cluster that loses all its points
    is moved onto the point currently farthest from its own center.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64)
    m = centers.shape[0]
    labels, dist = _assign(tokens, centers)
    history = [float(dist.sum())]
    for _ in range(max_iters):
        previous = centers.copy()
        for j in range(m):
            members = labels == j
            if members.any():
                centers[j] = tokens[members].mean(axis=0)
            else:
                far = int(dist.argmax())
                centers[j] = tokens[far]
                labels[far] = j
                dist[far] = 0.0
        new_labels, dist = _assign(tokens, centers)
        history.append(float(dist.sum()))
        if np.array_equal(new_labels, labels) or np.array_equal(centers, previous):
            break
        labels = new_labels
    return centers, history


def kmeans_landmarks(tokens, m: int, seed: int = 0, max_iters: int = 100) -> np.ndarray:
    """``m`` cluster centers of ``tokens`` (Lloyd's algorithm, seeded random-point init)."""
    tokens = as_matrix(tokens, "tokens")
    n = tokens.shape[0]
    if m < 1 or m > n:
        raise ValueError(f"need 1 <= m <= N, got m={m}, N={n}")
    rng = np.random.default_rng(seed)
    init = tokens[rng.choice(n, size=m, replace=False)]
    centers, _ = lloyd(tokens, init, max_iters)
    return centers


def kmeans_pair(q_tokens, k_tokens, m: int, seed: int = 0, max_iters: int = 100) -> LandmarkPair:
    """Fixed landmarks from separate Q and K token datasets."""
    return LandmarkPair(
        kmeans_landmarks(q_tokens, m, seed, max_iters),
        kmeans_landmarks(k_tokens, m, seed, max_iters),
    )
