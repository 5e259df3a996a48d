#!/usr/bin/env python3
"""Measured per-step time of several variants over a range of window lengths.

Writes one CSV row per (variant, n) with mean/p50/p95 nanoseconds next to the
analytic FLOPs, and the speed-up of each variant over recomputing exact
attention at the same n. Cells run one after another so timings do not
contend for cores.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field

from continual_sda.costs import Variant
from continual_sda.harness import RunConfig, run_bench

DEFAULT_VARIANTS = ["Att", "NyFix", "CoSi", "CoNySiCont", "CoNySiFix"]


@dataclass
class SweepConfig:
    lengths: list[int] = field(default_factory=lambda: [64, 128, 256, 512, 1024, 2048, 4096])
    variants: list[str] = field(default_factory=lambda: list(DEFAULT_VARIANTS))
    d: int = 200
    m: int = 8
    steps: int = 200
    att_steps: int = 5
    seed: int = 0


def sweep(cfg: SweepConfig):
    for n in cfg.lengths:
        baseline = None
        for name in cfg.variants:
            v = Variant.parse(name)
            steps = cfg.att_steps if v in (Variant.ATT, Variant.NY, Variant.NY_FIX) else cfg.steps
            res = run_bench(RunConfig(v, n, cfg.d, cfg.m if v.nystrom else 0, steps, cfg.seed))
            if v is Variant.ATT:
                baseline = res.mean_ns
            row = dict(zip(res.COLUMNS, res.row()))
            row["speedup_vs_att"] = f"{baseline / res.mean_ns:.2f}" if baseline else ""
            yield row


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", default="64,128,256,512,1024,2048,4096")
    p.add_argument("--variants", default=",".join(DEFAULT_VARIANTS))
    p.add_argument("--d", type=int, default=200)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--att-steps", type=int, default=5, help="measured steps for from-scratch variants")
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args(argv)
    variants = a.variants.split(",")
    if "Att" in variants:
        variants.remove("Att")
        variants.insert(0, "Att")
    cfg = SweepConfig([int(x) for x in a.n.split(",")], variants, a.d, a.m, a.steps, a.att_steps, a.seed)
    w = None
    for row in sweep(cfg):
        if w is None:
            w = csv.DictWriter(sys.stdout, list(row), lineterminator="\n")
            w.writeheader()
        w.writerow(row)
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
