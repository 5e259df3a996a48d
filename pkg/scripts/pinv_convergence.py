#!/usr/bin/env python3
"""How many pseudo-inverse iterations stream landmark kernels actually need.

For each landmark count m, harvests row-normalised landmark kernels from
continual-landmark states running on seeded uniform streams and reports
their condition numbers, the residual left after the default six
iterations, and the iteration count that reaches a target residual.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass

import numpy as np

from continual_sda.continual import cony_cont_init
from continual_sda.reference import AttentionInput
from continual_sda.streams import generate_stream
from continual_sda.tensor import phi, pinv_iterative, pinv_residual, row_scale


@dataclass
class StudyConfig:
    d: int = 64
    window_per_landmark: int = 4
    samples: int = 20
    target: float = 1e-6
    max_iters: int = 60


def kernels(cfg: StudyConfig, m: int):
    n = cfg.window_per_landmark * m
    for seed in range(cfg.samples):
        q, k, v = generate_stream(seed, 3 * n, cfg.d)
        s = cony_cont_init(AttentionInput(q[:n], k[:n], v[:n]), m)
        for t in range(n, 3 * n - seed % n):
            s.update(q[t], k[t], v[t])
        yield row_scale(s.gamma, phi(s.gamma))


def iterations_needed(g, target: float, cap: int) -> int:
    for it in range(1, cap + 1):
        if pinv_residual(g, pinv_iterative(g, it, check=False)) <= target:
            return it
    return cap + 1


def study(cfg: StudyConfig, ms):
    for m in ms:
        gs = list(kernels(cfg, m))
        cond = np.array([np.linalg.cond(g) for g in gs])
        res6 = np.array([pinv_residual(g, pinv_iterative(g, 6, check=False)) for g in gs])
        need = np.array([iterations_needed(g, cfg.target, cfg.max_iters) for g in gs])
        yield {
            "m": m,
            "cond_median": f"{np.median(cond):.3g}",
            "cond_max": f"{cond.max():.3g}",
            "residual6_median": f"{np.median(res6):.3g}",
            "converged6": int((res6 <= cfg.target).sum()),
            "samples": len(gs),
            "iters_median": int(np.median(need)),
            "iters_max": int(need.max()),
        }


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--m", default="2,4,8,16,32")
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--target", type=float, default=1e-6)
    a = p.parse_args(argv)
    cfg = StudyConfig(d=a.d, samples=a.samples, target=a.target)
    w = None
    for row in study(cfg, [int(x) for x in a.m.split(",")]):
        if w is None:
            w = csv.DictWriter(sys.stdout, list(row), lineterminator="\n")
            w.writeheader()
        w.writerow(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())
