"""Command-line entry point: ``continual-sda verify|bench|cost|landmarks``.

Every option can also be set through the environment as
``CONTINUAL_SDA_<COMMAND>_<OPTION>``, e.g. ``CONTINUAL_SDA_VERIFY_STEPS=48``.

Exit codes: 0 pass, 1 verification failure, 2 usage or parse error.
"""

from __future__ import annotations

import csv
import sys

import click

from . import costs
from .continual import save_state
from .costs import Model, Variant, VariantCost
from .harness import (
    CONTINUAL,
    FIXED,
    BenchResult,
    RunConfig,
    first_failure,
    iter_report_rows,
    run_bench,
    run_verify,
)
from .landmarks import LandmarkPair, kmeans_landmarks, subsample_tokens
from .streams import MatrixFormatError, read_matrix_csv, write_matrix_csv

ENV_PREFIX = "CONTINUAL_SDA"

STABILITY_NOTE = (
    "Streams are seeded and uniform in [-1, 1]. Continual updates cannot use "
    "max-subtracted softmax, so inputs with large |QK^T|/sqrt(d) overflow; "
    "scale such inputs down before streaming them."
)


def _variant(ctx, param, value):
    if value is None:
        return None
    try:
        return Variant.parse(value)
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc


def _int_list(ctx, param, value):
    if value is None:
        return None
    try:
        out = [int(x) for x in str(value).split(",") if x.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from exc
    if not out or min(out) < 1:
        raise click.BadParameter("values must be positive integers")
    return out


def _config(variant, n, d, m, steps, seed, pinv_iters, refresh_interval, tol, out) -> RunConfig:
    try:
        return RunConfig(
            variant, n, d, m or 0, steps, seed, pinv_iters, refresh_interval, tol, out
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc


def _landmarks(q_path, k_path, cfg: RunConfig) -> LandmarkPair | None:
    if q_path is None and k_path is None:
        return None
    if q_path is None or k_path is None:
        raise click.UsageError("--q-landmarks and --k-landmarks must be given together")
    try:
        pair = LandmarkPair(read_matrix_csv(q_path), read_matrix_csv(k_path))
    except (OSError, MatrixFormatError, ValueError) as exc:
        raise click.UsageError(f"cannot read landmarks: {exc}") from exc
    if pair.q_land.shape != (cfg.m, cfg.d):
        raise click.UsageError(f"landmarks must be {cfg.m} x {cfg.d}, got {pair.q_land.shape}")
    return pair


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _run_options(f):
    opts = [
        click.option("--variant", required=True, callback=_variant,
                     help="CoRe, CoSi, CoNyReCont, CoNySiCont, CoNyReFix, CoNySiFix (bench also: Att, Ny, NyFix)."),
        click.option("--d", type=click.IntRange(min=1), required=True, help="Token features."),
        click.option("--m", type=click.IntRange(min=1), default=None, help="Landmarks (Nystrom variants only)."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--pinv-iters", type=click.IntRange(min=1), default=6, show_default=True),
        click.option("--refresh-interval", type=click.IntRange(min=0), default=None,
                     help="Steps between full cache recomputes (default 10*n, 0 disables)."),
        click.option("--q-landmarks", type=click.Path(dir_okay=False), default=None,
                     help="Matrix CSV of fixed query landmarks."),
        click.option("--k-landmarks", type=click.Path(dir_okay=False), default=None,
                     help="Matrix CSV of fixed key landmarks."),
        click.option("--out", type=click.Path(dir_okay=False, allow_dash=True), default=None,
                     help="CSV output path (default stdout)."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


@click.group(epilog=STABILITY_NOTE)
def main():
    """Continual exact and Nystrom attention: verification, timing and cost tables."""


@main.command(epilog=STABILITY_NOTE)
@_run_options
@click.option("--n", type=click.IntRange(min=1), required=True, help="Window length.")
@click.option("--steps", type=click.IntRange(min=1), default=48, show_default=True)
@click.option("--tol", type=click.FloatRange(min=0, min_open=True), default=1e-9, show_default=True)
@click.option("--save-state", type=click.Path(dir_okay=False), default=None,
              help="Write the final state snapshot (.npz) here.")
@click.option("--load-state", type=click.Path(dir_okay=False, exists=True), default=None,
              help="Resume from a snapshot taken on the same seeded stream.")
def verify(variant, n, d, m, steps, seed, pinv_iters, refresh_interval, q_landmarks, k_landmarks,
           out, tol, save_state, load_state):
    """Check a continual variant against from-scratch attention at every step.

    Writes step,rel_error,flops_analytic,wall_ns,landmark_updated rows and
    exits 1 at the first step whose relative error exceeds --tol.
    """
    if variant not in CONTINUAL:
        raise click.UsageError(f"verify needs a continual variant, got {variant.value}")
    cfg = _config(variant, n, d, m, steps, seed, pinv_iters, refresh_interval, tol, out)
    landmarks = _landmarks(q_landmarks, k_landmarks, cfg) if variant in FIXED else None
    try:
        reports, state = run_verify(cfg, landmarks, resume_from=load_state)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    fh, close = _open_out(out)
    try:
        csv.writer(fh, lineterminator="\n").writerows(iter_report_rows(reports))
    finally:
        if close:
            fh.close()
    if save_state:
        save_state_fn(state, save_state)
    bad = first_failure(reports, tol)
    if bad is not None:
        offset = bad.step - reports[0].step + 1
        click.echo(
            f"FAIL {variant.value}: step {bad.step} (step {offset} of this run) "
            f"relative error {bad.rel_error:.3e} > {tol:.1e}",
            err=True,
        )
        sys.exit(1)
    worst = max(r.rel_error for r in reports)
    click.echo(f"PASS {variant.value}: {len(reports)} steps, max relative error {worst:.3e}", err=True)


save_state_fn = save_state


@main.command(epilog=STABILITY_NOTE)
@_run_options
@click.option("--n", "n_list", required=True, callback=_int_list,
              help="Window length, or comma-separated lengths to sweep.")
@click.option("--steps", type=click.IntRange(min=1), default=200, show_default=True,
              help="Measured steps per window length.")
@click.option("--per-step", is_flag=True, help="Emit one row per measured step instead of a summary.")
def bench(variant, d, m, seed, pinv_iters, refresh_interval, q_landmarks, k_landmarks, out,
          n_list, steps, per_step):
    """Time steady-state steps and report them next to analytic FLOPs."""
    fh, close = _open_out(out)
    writer = csv.writer(fh, lineterminator="\n")
    if per_step:
        writer.writerow(["variant", "n", "step", "wall_ns", "flops_analytic", "landmark_updated"])
    else:
        writer.writerow(BenchResult.COLUMNS)
    try:
        for n in n_list:
            cfg = _config(variant, n, d, m, steps, seed, pinv_iters, refresh_interval, 1.0, out)
            landmarks = _landmarks(q_landmarks, k_landmarks, cfg) if variant in FIXED else None
            res = run_bench(cfg, landmarks)
            if per_step:
                for i in range(res.steps):
                    writer.writerow([res.variant, n, i + 1, int(res.wall_ns[i]),
                                     int(res.flops_per_step[i]), int(res.updated[i])])
            else:
                writer.writerow(res.row())
            fh.flush()
    finally:
        if close:
            fh.close()


COST_COLUMNS = ("table", "name", "layers", "n", "d", "m", "flops", "flops_updated",
                "flops_nonupdated", "valley", "peak", "rel_flops")


def cost_rows(n: int, d: int, m: int | None, layers: int, only: str | None = None) -> list[dict]:
    """Per-variant (one layer) and per-model (``layers`` deep) cost rows."""
    att = costs.flops(VariantCost(Variant.ATT, n, d))
    rows = []
    for v in Variant:
        if v.nystrom and m is None:
            continue
        if only is not None and only.lower() != v.value.lower():
            continue
        c = VariantCost(v, n, d, m if v.nystrom else 0)
        mem = costs.memory(c)
        mean = costs.flops_mean(c)
        rows.append(dict(
            table="variant", name=v.value, layers=1, n=n, d=d, m=c.m,
            flops=mean,
            flops_updated=costs.flops(c, True) if v.continual_landmarks else "",
            flops_nonupdated=costs.flops(c, False) if v.continual_landmarks else "",
            valley=mem.valley, peak=mem.peak, rel_flops=att / mean,
        ))
    for mod in Model:
        if mod in (Model.NY, Model.NY_FIX, Model.CO_NY_CONT, Model.CO_NY_FIX) and m is None:
            continue
        if only is not None and only.lower() != mod.value.lower():
            continue
        rows.append(dict(
            table="model", name=mod.value, layers=layers, n=n, d=d, m=m or 0,
            flops=costs.model_flops(mod, n, d, m or 0, layers),
            flops_updated="", flops_nonupdated="", valley="", peak="",
            rel_flops=costs.relative_flops(mod, n, d, m or 0, layers),
        ))
    return rows


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.6g}" if not x.is_integer() else str(int(x))
    return str(x)


@main.command()
@click.option("--n", type=click.IntRange(min=1), required=True)
@click.option("--d", type=click.IntRange(min=1), required=True)
@click.option("--m", type=click.IntRange(min=1), default=None, help="Landmarks; Nystrom rows need it.")
@click.option("--layers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--variant", default=None, help="Restrict to one variant or model name.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Also write the rows as CSV.")
def cost(n, d, m, layers, variant, out):
    """Analytic FLOPs, valley/peak memory and FLOPs relative to plain attention."""
    names = {v.value.lower() for v in Variant} | {mod.value.lower() for mod in Model}
    if variant is not None and variant.lower() not in names:
        raise click.UsageError(f"unknown variant {variant!r}")
    if m is not None and m > n:
        raise click.UsageError("--m must not exceed --n")
    rows = cost_rows(n, d, m, layers, variant)
    if not rows:
        raise click.UsageError(f"{variant} needs --m")
    headers = ("name", "layers", "flops", "flops_updated", "flops_nonupdated", "valley", "peak", "rel_flops")
    for table, title in (("variant", "per variant, one layer"), ("model", f"per model, {layers} layer(s)")):
        sel = [r for r in rows if r["table"] == table]
        if not sel:
            continue
        cells = [[_fmt(r[h]) if h != "rel_flops" else f"x{r[h]:.2f}" for h in headers] for r in sel]
        widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(headers)]
        click.echo(f"# {title}: n={n} d={d} m={m if m is not None else '-'}")
        click.echo("  ".join(h.rjust(w) for h, w in zip(headers, widths)))
        for c in cells:
            click.echo("  ".join(x.rjust(w) for x, w in zip(c, widths)))
        click.echo()
    if out:
        with open(out, "w", newline="") as fh:
            w = csv.DictWriter(fh, COST_COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: _fmt(v) for k, v in r.items()})


@main.command()
@click.argument("input_csv", type=click.Path(dir_okay=False))
@click.option("--m", type=click.IntRange(min=1), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--cap", type=click.IntRange(min=1), default=50000, show_default=True,
              help="Subsample at most this many tokens before clustering.")
@click.option("--max-iters", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, allow_dash=True), default=None)
def landmarks(input_csv, m, seed, cap, max_iters, out):
    """Cluster a token matrix CSV into m fixed landmarks (matrix CSV output)."""
    try:
        tokens = read_matrix_csv(input_csv)
    except (OSError, MatrixFormatError) as exc:
        raise click.UsageError(f"cannot parse {input_csv}: {exc}") from exc
    if m > tokens.shape[0]:
        raise click.UsageError(f"m={m} exceeds the {tokens.shape[0]} tokens in {input_csv}")
    if cap < m:
        raise click.UsageError("--cap must be at least --m")
    centers = kmeans_landmarks(subsample_tokens(tokens, cap, seed), m, seed, max_iters)
    fh, close = _open_out(out)
    try:
        write_matrix_csv(fh, centers)
    finally:
        if close:
            fh.close()


def run():
    main(auto_envvar_prefix=ENV_PREFIX)


if __name__ == "__main__":
    run()
