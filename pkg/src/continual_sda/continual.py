"""Continual (one token per step) attention states.

Each state owns a sliding window of exactly ``n`` tokens stored as ring
buffers: slot ``head`` holds the oldest token, and a step overwrites that slot
with the incoming one. Window-indexed caches (``phi(A)``, ``AV``, rows of
``B``) live in the same ring, so a step touches O(1) rows instead of shifting
the whole window. Landmark-indexed caches are kept oldest-first.

Variants:

* :class:`CoReState` - exact retroactive attention (all n outputs per step).
* :class:`CoSiState` - exact single-output attention, keeps only K and V.
* :class:`CoNyContState` - Nystrom attention with rolling segment-means
  landmarks; a step takes the landmark-update path once per completed segment
  and the cheap path otherwise.
* :class:`CoNyFixedState` - Nystrom attention with frozen landmarks; the
  pseudo-inverse is computed once at construction.

Subtracting old-token contributions drifts slowly in floating point, so every
state recomputes its running sums from the window every ``refresh_interval``
steps (default ``10 * n``; 0 disables).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import ClassVar, Literal, Union

import numpy as np

from .landmarks import LandmarkPair, LandmarkSchedule
from .reference import AttentionInput, segment_means
from .tensor import DimensionMismatch, add_flops, as_matrix, matmul, phi, pinv_iterative, rho, row_scale

Mode = Literal["retroactive", "single"]


def _window(x, k=None, v=None) -> AttentionInput:
    return x if isinstance(x, AttentionInput) else AttentionInput(x, k, v)


def _token(x, d: int, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.shape != (d,):
        raise DimensionMismatch(f"{name} must have shape ({d},), got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite values")
    return a


def _check_mode(mode: str) -> None:
    if mode not in ("retroactive", "single"):
        raise ValueError(f"mode must be 'retroactive' or 'single', got {mode!r}")


class _Ring:
    """Shared ring-buffer bookkeeping; subclasses define ``n``, ``head`` and ``_update``."""

    kind: ClassVar[str]

    def ordered(self, a: np.ndarray) -> np.ndarray:
        """Rows of a window-indexed array from oldest to newest."""
        return np.roll(a, -self.head, axis=0)

    @property
    def newest(self) -> int:
        return (self.head - 1) % self.n

    def _tick(self) -> None:
        self.head = (self.head + 1) % self.n
        self.steps += 1
        if self.refresh_interval and self.steps % self.refresh_interval == 0:
            self.refresh()

    def step(self, q_new, k_new, v_new, mode: Mode = "retroactive"):
        """Slide the window by one token and return the attention output."""
        _check_mode(mode)
        self.update(q_new, k_new, v_new)
        return self.read(mode)

    def update(self, q_new, k_new, v_new) -> bool:
        """Advance the window without producing an output.

        Returns True when the step replaced a landmark.
        """
        d = self.d
        return self._update(_token(q_new, d, "q_new"), _token(k_new, d, "k_new"), _token(v_new, d, "v_new"))

    def window_keys(self) -> np.ndarray:
        return self.ordered(self.k)

    def window_values(self) -> np.ndarray:
        return self.ordered(self.v)


def _default_refresh(n: int, refresh_interval: int | None) -> int:
    if refresh_interval is None:
        return 10 * n
    if refresh_interval < 0:
        raise ValueError("refresh_interval must be >= 0")
    return int(refresh_interval)


@dataclass(eq=False)
class CoReState(_Ring):
    """Exact retroactive attention with cached ``phi(A)`` and ``AV``."""

    kind: ClassVar[str] = "CoRe"

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    phi_a: np.ndarray
    av: np.ndarray
    head: int = 0
    steps: int = 0
    refresh_interval: int = 0

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def d(self) -> int:
        return self.q.shape[1]

    @classmethod
    def from_window(cls, window, k=None, v=None, refresh_interval: int | None = None) -> "CoReState":
        w = _window(window, k, v)
        a = rho(w.q, w.k)
        return cls(
            w.q.copy(), w.k.copy(), w.v.copy(), phi(a), matmul(a, w.v),
            refresh_interval=_default_refresh(w.n, refresh_interval),
        )

    def refresh(self) -> None:
        a = rho(self.q, self.k)
        self.phi_a = phi(a)
        self.av = matmul(a, self.v)

    def _update(self, q_new, k_new, v_new) -> bool:
        h, n, d = self.head, self.n, self.d
        k_old = self.k[h].copy()
        v_old = self.v[h].copy()
        self.q[h], self.k[h], self.v[h] = q_new, k_new, v_new
        # rows other than h are Q_mem; row h is overwritten below
        r_old = rho(self.q, k_old)
        r_new = rho(self.q, k_new)
        self.phi_a += r_new - r_old
        self.av += np.outer(r_new, v_new) - np.outer(r_old, v_old)
        add_flops(2 * n + 4 * n * d)
        a = rho(q_new, self.k)
        self.phi_a[h] = phi(a)
        self.av[h] = matmul(a, self.v)
        self._tick()
        return False

    def read(self, mode: Mode = "retroactive") -> np.ndarray:
        _check_mode(mode)
        if mode == "single":
            i = self.newest
            add_flops(self.d)
            return self.av[i] / self.phi_a[i]
        return self.ordered(row_scale(self.av, self.phi_a))


@dataclass(eq=False)
class CoSiState(_Ring):
    """Exact single-output attention; only the K and V windows are kept."""

    kind: ClassVar[str] = "CoSi"

    k: np.ndarray
    v: np.ndarray
    head: int = 0
    steps: int = 0
    refresh_interval: int = 0
    _out: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.k.shape[0]

    @property
    def d(self) -> int:
        return self.k.shape[1]

    @classmethod
    def from_window(cls, window, k=None, v=None) -> "CoSiState":
        w = _window(window, k, v)
        return cls(w.k.copy(), w.v.copy())

    def refresh(self) -> None:
        pass

    def _update(self, q_new, k_new, v_new) -> bool:
        h = self.head
        self.k[h], self.v[h] = k_new, v_new
        a = rho(q_new, self.k)
        add_flops(self.d)
        self._out = matmul(a, self.v) / phi(a)
        self._tick()
        return False

    def read(self, mode: Mode = "single") -> np.ndarray:
        _check_mode(mode)
        if mode != "single":
            raise ValueError("CoSiState only produces single outputs")
        if self._out is None:
            raise RuntimeError("no token has been processed yet")
        return self._out.copy()


@dataclass(eq=False)
class CoNyContState(_Ring):
    """Nystrom attention with continually updated segment-means landmarks."""

    kind: ClassVar[str] = "CoNyCont"

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    schedule: LandmarkSchedule
    q_land: np.ndarray
    k_land: np.ndarray
    b: np.ndarray
    phi_b: np.ndarray
    gamma: np.ndarray
    phi_gamma: np.ndarray
    gamma_pinv: np.ndarray
    phi_delta: np.ndarray
    delta_v: np.ndarray
    b_gamma: np.ndarray
    b_gamma_valid: bool = True
    head: int = 0
    steps: int = 0
    refresh_interval: int = 0
    pinv_iters: int = 6
    pinv_check: bool = False

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def d(self) -> int:
        return self.q.shape[1]

    @property
    def m(self) -> int:
        return self.q_land.shape[0]

    @property
    def landmarks(self) -> LandmarkPair:
        return LandmarkPair(self.q_land.copy(), self.k_land.copy())

    @classmethod
    def from_window(
        cls,
        window,
        m: int,
        pinv_iters: int = 6,
        refresh_interval: int | None = None,
        pinv_check: bool = False,
    ) -> "CoNyContState":
        w = _window(window)
        q_land = segment_means(w.q, m)
        k_land = segment_means(w.k, m)
        z = np.zeros
        state = cls(
            w.q.copy(), w.k.copy(), w.v.copy(), LandmarkSchedule(w.n, m, w.d), q_land, k_land,
            z((w.n, m)), z(w.n), z((m, m)), z(m), z((m, m)), z(m), z((m, w.d)), z((w.n, m)),
            refresh_interval=_default_refresh(w.n, refresh_interval),
            pinv_iters=pinv_iters, pinv_check=pinv_check,
        )
        state._rebuild(with_pinv=True)
        return state

    def _rebuild(self, with_pinv: bool) -> None:
        self.b = rho(self.q, self.k_land)
        self.phi_b = phi(self.b)
        self.gamma = rho(self.q_land, self.k_land)
        self.phi_gamma = phi(self.gamma)
        if with_pinv:
            self.gamma_pinv = pinv_iterative(
                row_scale(self.gamma, self.phi_gamma), self.pinv_iters, check=self.pinv_check
            )
        delta = rho(self.q_land, self.k)
        self.phi_delta = phi(delta)
        self.delta_v = matmul(delta, self.v)
        self.b_gamma = matmul(row_scale(self.b, self.phi_b), self.gamma_pinv)
        self.b_gamma_valid = True

    def refresh(self) -> None:
        # gamma_pinv is rebuilt from scratch at every landmark update, so the
        # refresh leaves it alone and never calls the pseudo-inverse
        self._rebuild(with_pinv=False)

    def _update(self, q_new, k_new, v_new) -> bool:
        h = self.head
        k_old = self.k[h].copy()
        v_old = self.v[h].copy()
        self.q[h], self.k[h], self.v[h] = q_new, k_new, v_new
        event = self.schedule.push(q_new, k_new)
        if event.updated:
            self._update_landmark(h, q_new, k_new, v_new, k_old, v_old, event.q_land, event.k_land)
        else:
            self._update_tokens(h, q_new, k_new, v_new, k_old, v_old)
        self._tick()
        return event.updated

    def _update_tokens(self, h, q_new, k_new, v_new, k_old, v_old) -> None:
        m, d = self.m, self.d
        r_old = rho(self.q_land, k_old)
        r_new = rho(self.q_land, k_new)
        self.phi_delta += r_new - r_old
        self.delta_v += np.outer(r_new, v_new) - np.outer(r_old, v_old)
        beta = rho(q_new, self.k_land)
        s = phi(beta)
        self.b[h] = beta
        self.phi_b[h] = s
        self.b_gamma[h] = matmul(beta / s, self.gamma_pinv)
        add_flops(2 * m + 4 * m * d + m)

    def _update_landmark(self, h, q_new, k_new, v_new, k_old, v_old, q_lm, k_lm) -> None:
        m, n, d = self.m, self.n, self.d
        q_keep = self.q_land[1:]
        q_land = np.vstack([q_keep, q_lm])
        k_land = np.vstack([self.k_land[1:], k_lm])

        # Delta V: surviving landmark rows see k_old leave and k_new enter,
        # the new landmark row is computed against the whole current window
        r_old = rho(q_keep, k_old)
        r_new = rho(q_keep, k_new)
        delta_new = rho(q_lm, self.k)
        phi_delta = np.empty(m)
        phi_delta[:-1] = self.phi_delta[1:] + r_new - r_old
        phi_delta[-1] = phi(delta_new)
        delta_v = np.empty((m, d))
        delta_v[:-1] = self.delta_v[1:] + np.outer(r_new, v_new) - np.outer(r_old, v_old)
        delta_v[-1] = matmul(delta_new, self.v)
        add_flops(2 * (m - 1) + 4 * (m - 1) * d)

        # Gamma: drop the oldest landmark row/column, append the new ones
        g_col = rho(q_keep, k_lm)
        g_row = rho(q_lm, k_land)
        gamma = np.empty((m, m))
        gamma[:-1, :-1] = self.gamma[1:, 1:]
        gamma[:-1, -1] = g_col
        gamma[-1] = g_row
        phi_gamma = np.empty(m)
        phi_gamma[:-1] = self.phi_gamma[1:] - self.gamma[1:, 0] + g_col
        phi_gamma[-1] = phi(g_row)
        add_flops(2 * (m - 1))

        # B: drop the oldest landmark column, append the new one; row h is new
        b_col = rho(self.q, k_lm)
        phi_b = self.phi_b - self.b[:, 0] + b_col
        b = np.empty((n, m))
        b[:, :-1] = self.b[:, 1:]
        b[:, -1] = b_col
        b[h] = rho(q_new, k_land)
        phi_b[h] = phi(b[h])
        add_flops(2 * n)

        self.q_land, self.k_land = q_land, k_land
        self.gamma, self.phi_gamma = gamma, phi_gamma
        self.b, self.phi_b = b, phi_b
        self.phi_delta, self.delta_v = phi_delta, delta_v
        self.gamma_pinv = pinv_iterative(row_scale(gamma, phi_gamma), self.pinv_iters, check=self.pinv_check)
        # every row of B_phi pinv(Gamma_phi) changed; only the newest is needed
        # for a single output, the rest are rebuilt lazily on a retroactive read
        self.b_gamma[h] = matmul(b[h] / phi_b[h], self.gamma_pinv)
        self.b_gamma_valid = False

    def read(self, mode: Mode = "retroactive") -> np.ndarray:
        _check_mode(mode)
        w = row_scale(self.delta_v, self.phi_delta)
        if mode == "single":
            return matmul(self.b_gamma[self.newest], w)
        if not self.b_gamma_valid:
            self.b_gamma = matmul(row_scale(self.b, self.phi_b), self.gamma_pinv)
            self.b_gamma_valid = True
        return matmul(self.ordered(self.b_gamma), w)


@dataclass(eq=False)
class CoNyFixedState(_Ring):
    """Nystrom attention with frozen landmarks.

    No queries are stored: each query only contributes its own row of
    ``B_phi pinv(Gamma_phi)``, kept in a ring for retroactive reads.
    """

    kind: ClassVar[str] = "CoNyFixed"

    q_land: np.ndarray
    k_land: np.ndarray
    gamma_pinv: np.ndarray
    k: np.ndarray
    v: np.ndarray
    b_gamma: np.ndarray
    phi_delta: np.ndarray
    delta_v: np.ndarray
    head: int = 0
    steps: int = 0
    refresh_interval: int = 0

    @property
    def n(self) -> int:
        return self.k.shape[0]

    @property
    def d(self) -> int:
        return self.k.shape[1]

    @property
    def m(self) -> int:
        return self.q_land.shape[0]

    @property
    def landmarks(self) -> LandmarkPair:
        return LandmarkPair(self.q_land.copy(), self.k_land.copy())

    @classmethod
    def from_window(
        cls,
        window,
        landmarks: LandmarkPair,
        pinv_iters: int = 6,
        refresh_interval: int | None = None,
        pinv_check: bool = False,
    ) -> "CoNyFixedState":
        w = _window(window)
        q_land = as_matrix(landmarks.q_land, "q_land").copy()
        k_land = as_matrix(landmarks.k_land, "k_land").copy()
        if q_land.shape[1] != w.d or k_land.shape != q_land.shape:
            raise DimensionMismatch(f"landmarks must be m x {w.d}, got {q_land.shape}, {k_land.shape}")
        gamma = rho(q_land, k_land)
        gamma_pinv = pinv_iterative(row_scale(gamma, phi(gamma)), pinv_iters, check=pinv_check)
        b = rho(w.q, k_land)
        b_gamma = matmul(row_scale(b, phi(b)), gamma_pinv)
        delta = rho(q_land, w.k)
        return cls(
            q_land, k_land, gamma_pinv, w.k.copy(), w.v.copy(), b_gamma,
            phi(delta), matmul(delta, w.v),
            refresh_interval=_default_refresh(w.n, refresh_interval),
        )

    def refresh(self) -> None:
        delta = rho(self.q_land, self.k)
        self.phi_delta = phi(delta)
        self.delta_v = matmul(delta, self.v)

    def _update(self, q_new, k_new, v_new) -> bool:
        h, m, d = self.head, self.m, self.d
        k_old = self.k[h].copy()
        v_old = self.v[h].copy()
        self.k[h], self.v[h] = k_new, v_new
        r_old = rho(self.q_land, k_old)
        r_new = rho(self.q_land, k_new)
        self.phi_delta += r_new - r_old
        self.delta_v += np.outer(r_new, v_new) - np.outer(r_old, v_old)
        beta = rho(q_new, self.k_land)
        self.b_gamma[h] = matmul(beta / phi(beta), self.gamma_pinv)
        add_flops(2 * m + 4 * m * d + m)
        self._tick()
        return False

    def read(self, mode: Mode = "retroactive") -> np.ndarray:
        _check_mode(mode)
        w = row_scale(self.delta_v, self.phi_delta)
        if mode == "single":
            return matmul(self.b_gamma[self.newest], w)
        return matmul(self.ordered(self.b_gamma), w)


ContinualState = Union[CoReState, CoSiState, CoNyContState, CoNyFixedState]


# functional interface


def core_init(window, refresh_interval: int | None = None) -> CoReState:
    return CoReState.from_window(window, refresh_interval=refresh_interval)


def cosi_init(window) -> CoSiState:
    return CoSiState.from_window(window)


def cony_cont_init(window, m: int, pinv_iters: int = 6, **kwargs) -> CoNyContState:
    return CoNyContState.from_window(window, m, pinv_iters, **kwargs)


def cony_fixed_init(window, landmarks: LandmarkPair, pinv_iters: int = 6, **kwargs) -> CoNyFixedState:
    return CoNyFixedState.from_window(window, landmarks, pinv_iters, **kwargs)


def core_step_retroactive(state: CoReState, q_new, k_new, v_new) -> np.ndarray:
    return state.step(q_new, k_new, v_new, "retroactive")


def core_step_single(state: CoSiState, q_new, k_new, v_new) -> np.ndarray:
    return state.step(q_new, k_new, v_new, "single")


def cony_step(state: CoNyContState, q_new, k_new, v_new, mode: Mode = "retroactive"):
    return state.step(q_new, k_new, v_new, mode)


def cony_fixed_step(state: CoNyFixedState, q_new, k_new, v_new, mode: Mode = "retroactive"):
    return state.step(q_new, k_new, v_new, mode)


def block_step(state: ContinualState, block, mode: Mode | None = None):
    """Feed ``b`` tokens at once; same result as ``b`` single-token steps.

    ``block`` is an :class:`AttentionInput` (or a ``(q, k, v)`` tuple) with
    ``1 <= b <= n`` rows. Only the final output is assembled.
    """
    if not isinstance(block, AttentionInput):
        block = AttentionInput(*block)
    if not 1 <= block.n <= state.n:
        raise ValueError(f"block size must be in [1, {state.n}], got {block.n}")
    if mode is None:
        mode = "single" if isinstance(state, CoSiState) else "retroactive"
    _check_mode(mode)
    for i in range(block.n):
        state.update(block.q[i], block.k[i], block.v[i])
    return state.read(mode)


# snapshots

_KINDS = {cls.kind: cls for cls in (CoReState, CoSiState, CoNyContState, CoNyFixedState)}


def state_to_arrays(state: ContinualState) -> dict[str, np.ndarray]:
    out = {"kind": np.array(state.kind)}
    for f in dataclasses.fields(state):
        value = getattr(state, f.name)
        if f.name.startswith("_") or value is None:
            continue
        if isinstance(value, LandmarkSchedule):
            for sf in dataclasses.fields(value):
                out[f"{f.name}.{sf.name}"] = np.asarray(getattr(value, sf.name))
        else:
            out[f.name] = np.asarray(value)
    return out


def state_from_arrays(arrays) -> ContinualState:
    kind = str(arrays["kind"])
    if kind not in _KINDS:
        raise ValueError(f"unknown state kind {kind!r}")
    cls = _KINDS[kind]
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name.startswith("_"):
            continue
        if f.name == "schedule":
            sched = {
                sf.name: arrays[f"schedule.{sf.name}"] for sf in dataclasses.fields(LandmarkSchedule)
            }
            kwargs["schedule"] = LandmarkSchedule(
                n=int(sched["n"]), m=int(sched["m"]), d=int(sched["d"]),
                sizes=[int(s) for s in sched["sizes"]], phase=int(sched["phase"]),
                next_slot=int(sched["next_slot"]),
                acc_q=np.array(sched["acc_q"], dtype=np.float64),
                acc_k=np.array(sched["acc_k"], dtype=np.float64),
            )
            continue
        value = arrays[f.name]
        if value.ndim == 0:
            value = value.item()
        else:
            value = np.array(value, dtype=np.float64)
        kwargs[f.name] = value
    return cls(**kwargs)


def save_state(state: ContinualState, path) -> None:
    """Write every cache, ring buffer and schedule counter to an ``.npz`` bundle."""
    with open(path, "wb") as fh:
        np.savez(fh, **state_to_arrays(state))


def load_state(path) -> ContinualState:
    with np.load(path, allow_pickle=False) as data:
        return state_from_arrays({k: data[k] for k in data.files})
