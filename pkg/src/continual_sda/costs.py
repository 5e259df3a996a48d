"""Closed-form per-step FLOP and memory counts for the nine attention variants.

The polynomials count abstract element operations for one inference step
over an ``n``-token window of ``d`` features with ``m`` landmarks. They are
exact integers; nothing here is measured.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple


class Variant(str, enum.Enum):
    ATT = "Att"
    NY = "Ny"
    NY_FIX = "NyFix"
    CO_SI = "CoSi"
    CO_RE = "CoRe"
    CO_NY_SI_CONT = "CoNySiCont"
    CO_NY_RE_CONT = "CoNyReCont"
    CO_NY_SI_FIX = "CoNySiFix"
    CO_NY_RE_FIX = "CoNyReFix"

    @property
    def nystrom(self) -> bool:
        return self not in (Variant.ATT, Variant.CO_SI, Variant.CO_RE)

    @property
    def continual_landmarks(self) -> bool:
        return self in (Variant.CO_NY_SI_CONT, Variant.CO_NY_RE_CONT)

    @classmethod
    def parse(cls, name: str) -> "Variant":
        for v in cls:
            if v.value.lower() == name.lower():
                return v
        raise ValueError(f"unknown variant {name!r}; expected one of {[v.value for v in cls]}")


# the non-updated continual-landmark path costs the same as frozen landmarks
_FIXED_TWIN = {
    Variant.CO_NY_SI_CONT: Variant.CO_NY_SI_FIX,
    Variant.CO_NY_RE_CONT: Variant.CO_NY_RE_FIX,
}


@dataclass(frozen=True)
class VariantCost:
    variant: Variant
    n: int
    d: int
    m: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.n < 1 or self.d < 1:
            raise ValueError(f"n and d must be >= 1, got n={self.n}, d={self.d}")
        if self.variant.nystrom:
            if not 1 <= self.m <= self.n:
                raise ValueError(f"{self.variant.value} needs 1 <= m <= n, got m={self.m}, n={self.n}")
        elif self.m != 0:
            raise ValueError(f"{self.variant.value} takes no landmarks (m must be 0)")


class MemoryCost(NamedTuple):
    valley: int
    peak: int


def _flops(v: Variant, n: int, d: int, m: int) -> int:
    if v is Variant.ATT:
        return 2 * n * n * d + n * n + n * d + n
    if v is Variant.NY:
        return (4 * n * d * m + 2 * n * d + n + n * m * m + 2 * n * m + d * m * m
                + 24 * m**3 + 22 * m * m + 2 * m)
    if v is Variant.NY_FIX:
        return 4 * n * d * m + n * m * m + 2 * n * m + n + m
    if v is Variant.CO_RE:
        return 7 * n * d + 4 * n - 2 * d - 2
    if v is Variant.CO_SI:
        return 3 * n * d + 2 * n
    if v is Variant.CO_NY_RE_FIX:
        return n * d * m + 6 * d * m + m * m + 6 * m
    if v is Variant.CO_NY_SI_FIX:
        return 7 * d * m + m * m + 6 * m
    if v is Variant.CO_NY_RE_CONT:
        return (n * d * m + 8 * n * d + n * m * m + n * m + 11 * n + 15 * d * m + 2 * d
                + 24 * m**3 + 22 * m * m + 22 * m)
    if v is Variant.CO_NY_SI_CONT:
        return n * d * m + 3 * n * d + n + 9 * d * m + 2 * d + 24 * m**3 + 22 * m * m + 13 * m
    raise ValueError(v)


def flops(c: VariantCost, landmark_update: bool = True) -> int:
    """FLOPs of one step.

    For continual-landmark variants ``landmark_update`` selects the step that
    replaces a landmark (True) or the cheaper one in between (False); it is
    ignored for every other variant.
    """
    v = c.variant
    if v.continual_landmarks and not landmark_update:
        v = _FIXED_TWIN[v]
    return _flops(v, c.n, c.d, c.m)


def flops_amortized(c: VariantCost) -> float:
    """Mean FLOPs per step when one step in every ``n/m`` replaces a landmark."""
    if not c.variant.continual_landmarks:
        raise ValueError(f"{c.variant.value} has no landmark schedule to amortise")
    period = c.n / c.m
    return ((period - 1) * flops(c, False) + flops(c, True)) / period


def flops_mean(c: VariantCost) -> float:
    """Per-step FLOPs, amortised where the cost alternates between two paths."""
    return flops_amortized(c) if c.variant.continual_landmarks else float(flops(c))


def memory(c: VariantCost) -> MemoryCost:
    """Valley (resident between steps) and peak (during a step) element counts."""
    v, n, d, m = c.variant, c.n, c.d, c.m
    if v is Variant.ATT:
        return MemoryCost(3 * (n * d - 1), n * n + 4 * n * d + 1)
    if v is Variant.NY:
        return MemoryCost(3 * (n * d - 1), 4 * n * d + 2 * n * m + 2 * d * m + 1 + 6 * m * m + m)
    if v is Variant.NY_FIX:
        return MemoryCost(3 * (n * d - 1) + 2 * d * m + m * m, 4 * n * d + 2 * n * m + 2 * d * m + 2 * m * m + 1)
    if v is Variant.CO_RE:
        return MemoryCost(4 * n * d + n - d - 4, 5 * n * d + 2 * n)
    if v is Variant.CO_SI:
        return MemoryCost(2 * (n * d - 1), 2 * n * d + n + 2 * d)
    if v is Variant.CO_NY_RE_FIX:
        return MemoryCost(n * m + 3 * d * m + m * m + m, n * d + n * m + 3 * d * m + m * m + 2 * m)
    if v is Variant.CO_NY_SI_FIX:
        return MemoryCost(3 * d * m + m * m + m, 3 * d * m + d + m * m + 2 * m)
    if v is Variant.CO_NY_RE_CONT:
        return MemoryCost(
            3 * n * d + 2 * n * m + 4 * d * m + 2 * m * m - 2 * m - 6,
            4 * n * d + 3 * n * m + 2 * n + 4 * d * m + 7 * m * m + 4 * m,
        )
    if v is Variant.CO_NY_SI_CONT:
        return MemoryCost(
            2 * n * d + 4 * d * m + 2 * m * m - 2,
            2 * n * d + n * m + n + 4 * d * m + d + 7 * m * m + 4 * m,
        )
    raise ValueError(v)


class Model(str, enum.Enum):
    """Whole-model families: how a stack of attention layers is assembled."""

    ATT = "Att"
    CO = "Co"
    NY = "Ny"
    NY_FIX = "NyFix"
    CO_NY_CONT = "CoNyCont"
    CO_NY_FIX = "CoNyFix"

    @classmethod
    def parse(cls, name: str) -> "Model":
        for v in cls:
            if v.value.lower() == name.lower():
                return v
        raise ValueError(f"unknown model {name!r}; expected one of {[v.value for v in cls]}")


# (variant for all but the last layer, variant for the last layer); continual
# stacks run retroactive layers below a single-output top layer
_STACKS = {
    Model.ATT: (Variant.ATT, Variant.ATT),
    Model.NY: (Variant.NY, Variant.NY),
    Model.NY_FIX: (Variant.NY_FIX, Variant.NY_FIX),
    Model.CO: (Variant.CO_RE, Variant.CO_SI),
    Model.CO_NY_CONT: (Variant.CO_NY_RE_CONT, Variant.CO_NY_SI_CONT),
    Model.CO_NY_FIX: (Variant.CO_NY_RE_FIX, Variant.CO_NY_SI_FIX),
}


def model_layers(model: Model, layers: int) -> list[Variant]:
    if layers < 1:
        raise ValueError("layers must be >= 1")
    lower, top = _STACKS[Model(model)]
    return [lower] * (layers - 1) + [top]


def model_flops(model: Model, n: int, d: int, m: int, layers: int = 1) -> float:
    """Per-step FLOPs of a ``layers``-deep stack (amortised for continual landmarks)."""
    total = 0.0
    for v in model_layers(model, layers):
        total += flops_mean(VariantCost(v, n, d, m if v.nystrom else 0))
    return total


def relative_flops(model: Model, n: int, d: int, m: int, layers: int = 1) -> float:
    """How many times cheaper than plain attention with the same depth."""
    return model_flops(Model.ATT, n, d, 0, layers) / model_flops(model, n, d, m, layers)
