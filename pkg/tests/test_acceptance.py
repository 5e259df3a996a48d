"""Acceptance gate: each criterion is checked at its stated tolerance.

Run under pytest (one test per criterion, summary lines printed at the end of
the session) or directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import functools
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from continual_sda.continual import (  # noqa: E402
    cony_cont_init,
    cony_fixed_init,
    core_init,
    cosi_init,
)
from continual_sda.costs import (  # noqa: E402
    Model,
    Variant,
    VariantCost,
    flops,
    flops_amortized,
    memory,
    model_flops,
    relative_flops,
)
from continual_sda.harness import RunConfig, fixed_landmarks, run_bench  # noqa: E402
from continual_sda.landmarks import kmeans_pair  # noqa: E402
from continual_sda.reference import AttentionInput, sda_exact, sda_nystrom  # noqa: E402
from continual_sda.streams import generate_stream, training_tokens  # noqa: E402
from continual_sda.tensor import count_ops, phi, pinv_iterative, pinv_residual, row_scale  # noqa: E402

from oracles import svd_pinv  # noqa: E402

NS = (8, 16, 120)
DS = (2, 8, 64)
MS = (2, 4, 8)
TOL = 1e-9
SINGLE_TOL = 1e-12

RESULTS: dict[int, str] = {}


def rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def window(q, k, v, t, n):
    return AttentionInput(q[t - n + 1 : t + 1], k[t - n + 1 : t + 1], v[t - n + 1 : t + 1])


def record(number: int, title: str, ok: bool, detail: str) -> None:
    RESULTS[number] = f"{'PASS' if ok else 'FAIL'}  [{number:2d}] {title}: {detail}"
    print(RESULTS[number])


@functools.lru_cache(maxsize=None)
def stream_grid():
    """Run every continual variant over the (n, d[, m]) grid once.

    Returns per-family worst errors, single-vs-retroactive gaps, landmark
    update counts, pseudo-inverse calls on steps that must not make any, and
    wall time per family.
    """
    out = {"exact": {}, "cont": {}, "fixed": {}, "single_gap": 0.0, "pinv_forbidden": 0,
           "pinv_allowed": 0, "min_updates": None, "seconds": {}}

    t0 = time.perf_counter()
    for n in NS:
        for d in DS:
            q, k, v = generate_stream(1000 * n + d, 4 * n, d)
            w = AttentionInput(q[:n], k[:n], v[:n])
            re, si = core_init(w), cosi_init(w)
            worst = 0.0
            for t in range(n, 4 * n):
                a = re.step(q[t], k[t], v[t])
                b = si.step(q[t], k[t], v[t], "single")
                worst = max(worst, rel(a, sda_exact(window(q, k, v, t, n))))
                out["single_gap"] = max(out["single_gap"], float(np.abs(a[-1] - b).max()))
            out["exact"][(n, d)] = worst
    out["seconds"]["exact"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    for n in NS:
        for d in DS:
            for m in MS:
                if m > n:
                    continue
                q, k, v = generate_stream(1000 * n + 10 * d + m, 4 * n, d)
                w = AttentionInput(q[:n], k[:n], v[:n])
                re, si = cony_cont_init(w, m), cony_cont_init(w, m)
                worst, updates = 0.0, 0
                for t in range(n, 4 * n):
                    with count_ops() as ops:
                        upd = re.update(q[t], k[t], v[t])
                        a = re.read("retroactive")
                        si.update(q[t], k[t], v[t])
                        b = si.read("single")
                    updates += upd
                    if upd:
                        out["pinv_allowed"] += ops.pinv_calls
                    else:
                        out["pinv_forbidden"] += ops.pinv_calls
                    ref = sda_nystrom(window(q, k, v, t, n), re.q_land, re.k_land)
                    worst = max(worst, rel(a, ref), rel(b, ref[-1]))
                    out["single_gap"] = max(out["single_gap"], float(np.abs(a[-1] - b).max()))
                out["cont"][(n, d, m)] = worst
                mu = out["min_updates"]
                out["min_updates"] = updates if mu is None else min(mu, updates)
    out["seconds"]["cont"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    for n in NS:
        for d in DS:
            for m in MS:
                if m > n:
                    continue
                tq, tk = training_tokens(n + d + m, max(4 * n, 50 * m), d)
                lm = kmeans_pair(tq, tk, m, seed=m)
                q, k, v = generate_stream(7 * n + d + m, 4 * n, d)
                w = AttentionInput(q[:n], k[:n], v[:n])
                re, si = cony_fixed_init(w, lm), cony_fixed_init(w, lm)
                worst = 0.0
                for t in range(n, 4 * n):
                    with count_ops() as ops:
                        a = re.step(q[t], k[t], v[t])
                        b = si.step(q[t], k[t], v[t], "single")
                    out["pinv_forbidden"] += ops.pinv_calls
                    worst = max(worst, rel(a, sda_nystrom(window(q, k, v, t, n), lm.q_land, lm.k_land)))
                    out["single_gap"] = max(out["single_gap"], float(np.abs(a[-1] - b).max()))
                out["fixed"][(n, d, m)] = worst
    out["seconds"]["fixed"] = time.perf_counter() - t0
    return out


def dual_stream_gap() -> float:
    worst = 0.0
    for n in NS:
        for d in DS:
            m = min(4, n)
            tq, tk = training_tokens(n + d, max(4 * n, 50 * m), d)
            lm = kmeans_pair(tq, tk, m, seed=0)
            tail = generate_stream(5000 + n + d, n, d)
            outs = []
            for seed, length in ((1, 2 * n + 3), (2, 3 * n)):
                pre = generate_stream(seed, length, d)
                q, k, v = (np.vstack([p, t]) for p, t in zip(pre, tail))
                s = cony_fixed_init(AttentionInput(q[:n], k[:n], v[:n]), lm)
                for t in range(n, len(q)):
                    s.update(q[t], k[t], v[t])
                outs.append(s.read())
            worst = max(worst, rel(outs[0], outs[1]))
    return worst


def check_1():
    g = stream_grid()
    worst = max(g["exact"].values())
    secs = g["seconds"]["exact"]
    ok = worst <= TOL and secs < 30
    return ok, f"max rel err {worst:.2e} over {len(g['exact'])} (n, d) streams of 3n steps in {secs:.1f}s"


def check_2():
    g = stream_grid()
    worst = max(g["cont"].values())
    secs = g["seconds"]["cont"]
    ok = worst <= TOL and g["min_updates"] >= 2 and secs < 120
    return ok, (f"max rel err {worst:.2e} over {len(g['cont'])} configs, both modes, "
                f">= {g['min_updates']} landmark updates each, {secs:.1f}s")


def check_3():
    g = stream_grid()
    worst = max(g["fixed"].values())
    dual = dual_stream_gap()
    ok = worst <= TOL and dual <= TOL
    return ok, f"max rel err {worst:.2e} over {len(g['fixed'])} configs; dual-stream gap {dual:.2e}"


def check_4():
    gap = stream_grid()["single_gap"]
    return gap <= SINGLE_TOL, f"max |single - last retroactive row| {gap:.2e}"


def check_5():
    a = dict(n=120, d=192, m=4)
    att = model_flops(Model.ATT, **a)
    checks = [
        att == 5_567_160,
        model_flops(Model.CO, **a) == 69_360,
        abs(relative_flops(Model.CO, **a) / 80.26 - 1) <= 0.01,
        model_flops(Model.NY, **a) == 422_688,
        model_flops(Model.NY_FIX, **a) == 371_644,
        model_flops(Model.CO_NY_FIX, **a) == 5_416,
        abs(relative_flops(Model.CO_NY_FIX, **a) / 1028 - 1) <= 0.01,
        round(model_flops(Model.CO_NY_CONT, **a)) == 10_923,
        abs(relative_flops(Model.CO_NY_CONT, **a) / 509.66 - 1) <= 0.01,
        abs(model_flops(Model.CO_NY_CONT, layers=2, **a) / 0.11e6 - 1) <= 0.05,
    ]
    return all(checks), (
        f"Att {att:,.0f}, CoSi x{relative_flops(Model.CO, **a):.2f}, "
        f"CoNySiFix x{relative_flops(Model.CO_NY_FIX, **a):.1f}, "
        f"CoNySiCont {model_flops(Model.CO_NY_CONT, **a):,.1f} x{relative_flops(Model.CO_NY_CONT, **a):.2f}, "
        f"2-layer CoNyCont {model_flops(Model.CO_NY_CONT, layers=2, **a) / 1e6:.4f}M "
        f"({sum(checks)}/{len(checks)} checks)"
    )


def check_6():
    att = flops(VariantCost(Variant.ATT, 4, 5))
    mem = memory(VariantCost(Variant.ATT, 4, 5))
    valley = memory(VariantCost(Variant.CO_NY_SI_FIX, 4, 5, 2)).valley
    ok = att == 200 and tuple(mem) == (57, 97) and valley == 36
    return ok, f"flops(Att,4,5)={att}, memory(Att,4,5)={tuple(mem)}, valley(CoNySiFix,d=5,m=2)={valley}"


def check_7():
    d, m = 200, 8
    ns = [64 * 2**i for i in range(7)]
    fix = {flops(VariantCost(Variant.CO_NY_SI_FIX, n, d, m)) for n in ns}
    att = [flops(VariantCost(Variant.ATT, n, d)) for n in ns]
    top_ratio = att[-1] / att[-2]
    order_ok = True
    for n in range(64, 4097):
        chain = [
            flops(VariantCost(Variant.CO_NY_SI_FIX, n, d, m)),
            flops_amortized(VariantCost(Variant.CO_NY_SI_CONT, n, d, m)),
            flops(VariantCost(Variant.CO_SI, n, d)),
            flops(VariantCost(Variant.NY_FIX, n, d, m)),
            flops(VariantCost(Variant.NY, n, d, m)),
            flops(VariantCost(Variant.ATT, n, d)),
        ]
        order_ok &= all(a < b for a, b in zip(chain, chain[1:]))
    ok = len(fix) == 1 and abs(top_ratio - 4) <= 0.2 and order_ok
    return ok, (f"CoNySiFix constant ({fix.pop()}), Att ratio 4096/2048 = {top_ratio:.4f}, "
                f"ordering holds for n=64..4096: {order_ok}")


def harvest_gammas(count: int = 100, d: int = 64):
    """Row-normalised landmark kernels taken from continual states mid-stream."""
    out = []
    for i in range(count):
        m = 2 + i % 31
        n = 4 * m
        q, k, v = generate_stream(i, 3 * n, d)
        s = cony_cont_init(AttentionInput(q[:n], k[:n], v[:n]), m)
        for t in range(n, n + 2 * n - (i % n)):
            s.update(q[t], k[t], v[t])
        out.append(row_scale(s.gamma, phi(s.gamma)))
    return out


def check_8():
    gammas = harvest_gammas()
    res, agree = [], []
    for g in gammas:
        z = pinv_iterative(g, 6, check=False)
        res.append(pinv_residual(g, z))
        agree.append(float(np.linalg.norm(z - svd_pinv(g))))
    res, agree = np.array(res), np.array(agree)
    ok_res = int((res <= 1e-6).sum())
    ok_svd = int((agree <= 1e-5).sum())
    ok = ok_res == len(gammas) and ok_svd == len(gammas)
    return ok, (f"{ok_res}/{len(gammas)} within residual 1e-6 (median {np.median(res):.1e}, "
                f"worst {res.max():.1e}); {ok_svd}/{len(gammas)} within 1e-5 of SVD")


def check_9():
    g = stream_grid()
    n, d, m = 20, 4, 4
    q, k, v = generate_stream(9, 5 * n, d)
    s = cony_fixed_init(AttentionInput(q[:n], k[:n], v[:n]), fixed_landmarks(RunConfig(Variant.CO_NY_SI_FIX, n, d, m)),
                        refresh_interval=3)
    with count_ops() as ops:
        for t in range(n, 5 * n):
            s.step(q[t], k[t], v[t], "single")
    forbidden = g["pinv_forbidden"] + ops.pinv_calls
    ok = forbidden == 0 and g["pinv_allowed"] > 0
    return ok, (f"{forbidden} pseudo-inverse calls on non-update and fixed-landmark steps; "
                f"{g['pinv_allowed']} on landmark-update steps")


def check_10():
    n, d, m = 4096, 200, 8
    fixed = run_bench(RunConfig(Variant.CO_NY_SI_FIX, n, d, m, steps=200))
    exact = run_bench(RunConfig(Variant.ATT, n, d, steps=5), warmup=1)
    ratio = exact.mean_ns / fixed.mean_ns
    return ratio >= 50, (f"CoNySiFix {fixed.mean_ns / 1e3:.1f} us/step vs recomputed attention "
                         f"{exact.mean_ns / 1e6:.1f} ms/step: x{ratio:.0f}")


CRITERIA = {
    1: ("exact continual equivalence", check_1),
    2: ("continual-landmark Nystrom equivalence", check_2),
    3: ("fixed-landmark Nystrom equivalence", check_3),
    4: ("single output equals last retroactive row", check_4),
    5: ("audio-configuration FLOP table", check_5),
    6: ("closed-form spot values", check_6),
    7: ("asymptotics at d=200, m=8", check_7),
    8: ("pseudo-inverse contract on stream kernels", check_8),
    9: ("no pseudo-inverse on non-update steps", check_9),
    10: ("wall-clock sanity at n=4096", check_10),
}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    title, check = CRITERIA[number]
    ok, detail = check()
    record(number, title, ok, detail)
    assert ok, RESULTS[number]


if __name__ == "__main__":
    failed = 0
    for number in sorted(CRITERIA):
        title, check = CRITERIA[number]
        ok, detail = check()
        record(number, title, ok, detail)
        failed += not ok
    sys.exit(1 if failed else 0)
