"""Stream verification and benchmarking runs behind the command-line tool."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import costs
from .continual import (
    ContinualState,
    CoNyContState,
    CoNyFixedState,
    CoReState,
    CoSiState,
    load_state,
)
from .costs import Variant, VariantCost
from .landmarks import LandmarkPair, kmeans_pair
from .reference import AttentionInput, landmark_pinv, sda_exact, sda_nystrom, segment_means
from .streams import generate_stream, training_tokens

CONTINUAL = (
    Variant.CO_RE,
    Variant.CO_SI,
    Variant.CO_NY_RE_CONT,
    Variant.CO_NY_SI_CONT,
    Variant.CO_NY_RE_FIX,
    Variant.CO_NY_SI_FIX,
)
SINGLE_OUTPUT = (Variant.CO_SI, Variant.CO_NY_SI_CONT, Variant.CO_NY_SI_FIX)
FIXED = (Variant.NY_FIX, Variant.CO_NY_RE_FIX, Variant.CO_NY_SI_FIX)

REPORT_COLUMNS = ("step", "rel_error", "flops_analytic", "wall_ns", "landmark_updated")


@dataclass
class RunConfig:
    variant: Variant
    n: int
    d: int
    m: int = 0
    steps: int = 200
    seed: int = 0
    pinv_iters: int = 6
    refresh_interval: int | None = None
    tolerance: float = 1e-9
    output_path: str | None = None

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")
        if self.variant.nystrom:
            if not 1 <= self.m <= self.n:
                raise ValueError(f"{self.variant.value} needs --m with 1 <= m <= n")
        elif self.m:
            raise ValueError(f"{self.variant.value} takes no landmarks; drop --m")
        if self.pinv_iters < 1:
            raise ValueError("pinv_iters must be >= 1")

    @property
    def cost(self) -> VariantCost:
        return VariantCost(self.variant, self.n, self.d, self.m if self.variant.nystrom else 0)

    @property
    def mode(self) -> str:
        return "single" if self.variant in SINGLE_OUTPUT else "retroactive"


@dataclass
class StreamReport:
    step: int
    rel_error: float
    flops_analytic: int
    wall_ns: int
    landmark_updated: bool

    def row(self) -> list[str]:
        return [
            str(self.step),
            format(self.rel_error, ".6e"),
            str(self.flops_analytic),
            str(self.wall_ns),
            str(int(self.landmark_updated)),
        ]


def fixed_landmarks(cfg: RunConfig) -> LandmarkPair:
    """Landmarks clustered from a seeded training set independent of the stream."""
    q_tok, k_tok = training_tokens(cfg.seed, max(4 * cfg.n, 50 * cfg.m), cfg.d)
    return kmeans_pair(q_tok, k_tok, cfg.m, seed=cfg.seed)


def build_state(cfg: RunConfig, window: AttentionInput, landmarks: LandmarkPair | None = None) -> ContinualState:
    v = cfg.variant
    if v is Variant.CO_RE:
        return CoReState.from_window(window, refresh_interval=cfg.refresh_interval)
    if v is Variant.CO_SI:
        return CoSiState.from_window(window)
    if v in (Variant.CO_NY_RE_CONT, Variant.CO_NY_SI_CONT):
        return CoNyContState.from_window(
            window, cfg.m, cfg.pinv_iters, refresh_interval=cfg.refresh_interval
        )
    if v in (Variant.CO_NY_RE_FIX, Variant.CO_NY_SI_FIX):
        return CoNyFixedState.from_window(
            window, landmarks, cfg.pinv_iters, refresh_interval=cfg.refresh_interval
        )
    raise ValueError(f"{v.value} is not a continual variant")


def _expected_kind(v: Variant) -> type:
    return {
        Variant.CO_RE: CoReState,
        Variant.CO_SI: CoSiState,
        Variant.CO_NY_RE_CONT: CoNyContState,
        Variant.CO_NY_SI_CONT: CoNyContState,
        Variant.CO_NY_RE_FIX: CoNyFixedState,
        Variant.CO_NY_SI_FIX: CoNyFixedState,
    }[v]


def oracle(cfg: RunConfig, window: AttentionInput, state: ContinualState, landmarks: LandmarkPair | None):
    """From-scratch output for the current window."""
    v = cfg.variant
    if v in (Variant.CO_RE, Variant.CO_SI):
        out = sda_exact(window)
    elif v in (Variant.CO_NY_RE_CONT, Variant.CO_NY_SI_CONT):
        out = sda_nystrom(window, state.q_land, state.k_land, cfg.pinv_iters)
    else:
        out = sda_nystrom(window, landmarks.q_land, landmarks.k_land, cfg.pinv_iters)
    return out[-1] if v in SINGLE_OUTPUT else out


def rel_error(out, ref) -> float:
    denom = np.linalg.norm(ref)
    diff = np.linalg.norm(np.asarray(out) - ref)
    return float(diff / denom) if denom > 0 else float(diff)


class VerificationFailure(Exception):
    def __init__(self, report: StreamReport, tolerance: float):
        self.report = report
        super().__init__(
            f"step {report.step}: relative error {report.rel_error:.3e} exceeds tolerance {tolerance:.1e}"
        )


def run_verify(
    cfg: RunConfig,
    landmarks: LandmarkPair | None = None,
    resume_from: str | None = None,
) -> tuple[list[StreamReport], ContinualState]:
    """Step a continual state through a seeded stream, checking every output.

    With ``resume_from`` the state is loaded from a snapshot and the run picks
    up the same seeded stream where the snapshot left off.
    """
    if cfg.variant not in CONTINUAL:
        raise ValueError(f"verify needs a continual variant, got {cfg.variant.value}")
    if cfg.variant in FIXED and landmarks is None:
        landmarks = fixed_landmarks(cfg)
    state = None
    start = 0
    if resume_from is not None:
        state = load_state(resume_from)
        if not isinstance(state, _expected_kind(cfg.variant)) or (state.n, state.d) != (cfg.n, cfg.d):
            raise ValueError(f"snapshot {resume_from} does not match {cfg.variant.value} n={cfg.n} d={cfg.d}")
        start = state.steps
    q, k, v = generate_stream(cfg.seed, cfg.n + start + cfg.steps, cfg.d)
    if state is None:
        state = build_state(cfg, AttentionInput(q[: cfg.n], k[: cfg.n], v[: cfg.n]), landmarks)
    reports = []
    for i in range(cfg.steps):
        t = cfg.n + start + i
        t0 = time.perf_counter_ns()
        updated = state.update(q[t], k[t], v[t])
        out = state.read(cfg.mode)
        wall = time.perf_counter_ns() - t0
        lo = t - cfg.n + 1
        window = AttentionInput(q[lo : t + 1], k[lo : t + 1], v[lo : t + 1])
        ref = oracle(cfg, window, state, landmarks)
        err = rel_error(out, ref)
        if not np.isfinite(err):
            err = float("inf")
        reports.append(
            StreamReport(start + i + 1, err, costs.flops(cfg.cost, landmark_update=updated), wall, updated)
        )
    return reports, state


def first_failure(reports: list[StreamReport], tolerance: float) -> StreamReport | None:
    for r in reports:
        if not r.rel_error <= tolerance:
            return r
    return None


@dataclass
class BenchResult:
    variant: str
    n: int
    d: int
    m: int
    steps: int
    mean_ns: float
    p50_ns: float
    p95_ns: float
    flops_analytic: float
    flops_model: float
    wall_ns: np.ndarray
    flops_per_step: np.ndarray
    updated: np.ndarray

    COLUMNS = ("variant", "n", "d", "m", "steps", "mean_ns", "p50_ns", "p95_ns", "flops_analytic", "flops_model")

    def row(self) -> list[str]:
        return [
            self.variant, str(self.n), str(self.d), str(self.m), str(self.steps),
            f"{self.mean_ns:.0f}", f"{self.p50_ns:.0f}", f"{self.p95_ns:.0f}",
            f"{self.flops_analytic:.1f}", f"{self.flops_model:.1f}",
        ]


def _recompute_step(cfg: RunConfig, landmarks, gamma_pinv):
    """Per-step callable that recomputes a non-continual variant on the window."""
    v = cfg.variant
    if v is Variant.ATT:
        return lambda w: sda_exact(w)
    if v is Variant.NY:
        return lambda w: sda_nystrom(w, segment_means(w.q, cfg.m), segment_means(w.k, cfg.m), cfg.pinv_iters)
    if v is Variant.NY_FIX:
        return lambda w: sda_nystrom(w, landmarks.q_land, landmarks.k_land, gamma_pinv=gamma_pinv)
    raise ValueError(v)


def run_bench(cfg: RunConfig, landmarks: LandmarkPair | None = None, warmup: int | None = None) -> BenchResult:
    """Steady-state per-step timing next to the analytic FLOP count.

    Continual variants discard ``n`` warm-up steps so the landmark schedule
    and caches are in steady state; from-scratch variants have no state and
    discard only a few steps.
    """
    continual = cfg.variant in CONTINUAL
    if cfg.variant in FIXED and landmarks is None:
        landmarks = fixed_landmarks(cfg)
    if warmup is None:
        warmup = cfg.n if continual else min(cfg.n, 3)
    total = cfg.n + warmup + cfg.steps
    q, k, v = generate_stream(cfg.seed, total, cfg.d)
    wall = np.empty(cfg.steps, dtype=np.int64)
    fl = np.empty(cfg.steps, dtype=np.int64)
    upd = np.zeros(cfg.steps, dtype=bool)
    if continual:
        state = build_state(cfg, AttentionInput(q[: cfg.n], k[: cfg.n], v[: cfg.n]), landmarks)
        mode = cfg.mode
        for t in range(cfg.n, total):
            t0 = time.perf_counter_ns()
            updated = state.update(q[t], k[t], v[t])
            state.read(mode)
            dt = time.perf_counter_ns() - t0
            i = t - cfg.n - warmup
            if i >= 0:
                wall[i] = dt
                upd[i] = updated
                fl[i] = costs.flops(cfg.cost, landmark_update=updated)
    else:
        gamma_pinv = None
        if cfg.variant is Variant.NY_FIX:
            gamma_pinv = landmark_pinv(landmarks.q_land, landmarks.k_land, cfg.pinv_iters)
        step = _recompute_step(cfg, landmarks, gamma_pinv)
        for t in range(cfg.n, total):
            lo = t - cfg.n + 1
            w = AttentionInput(q[lo : t + 1], k[lo : t + 1], v[lo : t + 1])
            t0 = time.perf_counter_ns()
            step(w)
            dt = time.perf_counter_ns() - t0
            i = t - cfg.n - warmup
            if i >= 0:
                wall[i] = dt
                fl[i] = costs.flops(cfg.cost)
    return BenchResult(
        cfg.variant.value, cfg.n, cfg.d, cfg.m, cfg.steps,
        float(wall.mean()), float(np.percentile(wall, 50)), float(np.percentile(wall, 95)),
        float(fl.mean()), costs.flops_mean(cfg.cost), wall, fl, upd,
    )


def iter_report_rows(reports: list[StreamReport]) -> Iterator[list[str]]:
    yield list(REPORT_COLUMNS)
    for r in reports:
        yield r.row()
