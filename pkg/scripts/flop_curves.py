#!/usr/bin/env python3
"""Per-step FLOPs of every variant against window length (CSV on stdout).

Defaults reproduce the d=200, m=8 sweep over n = 64 ... 4096.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass

from continual_sda.costs import Variant, VariantCost, flops, flops_mean


@dataclass
class CurveConfig:
    d: int = 200
    m: int = 8
    n_min: int = 64
    n_max: int = 4096

    def lengths(self) -> list[int]:
        out, n = [], self.n_min
        while n <= self.n_max:
            out.append(n)
            n *= 2
        return out


def rows(cfg: CurveConfig):
    for n in cfg.lengths():
        for v in Variant:
            c = VariantCost(v, n, cfg.d, cfg.m if v.nystrom else 0)
            yield {
                "n": n,
                "variant": v.value,
                "flops": flops_mean(c),
                "flops_updated": flops(c, True),
                "flops_nonupdated": flops(c, False),
            }


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--d", type=int, default=200)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--n-min", type=int, default=64)
    p.add_argument("--n-max", type=int, default=4096)
    a = p.parse_args(argv)
    cfg = CurveConfig(a.d, a.m, a.n_min, a.n_max)
    w = csv.DictWriter(sys.stdout, ["n", "variant", "flops", "flops_updated", "flops_nonupdated"],
                       lineterminator="\n")
    w.writeheader()
    w.writerows(rows(cfg))
    return 0


if __name__ == "__main__":
    sys.exit(main())
