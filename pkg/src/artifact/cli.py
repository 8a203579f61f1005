"""Command-line driver: ``python -m artifact <command>``.

Exit codes: 0 on success, 2 on validation errors (bad config, missing or
stale artifacts), 1 on runtime failures.
"""
from __future__ import annotations

import logging
import sys

import click

from . import pipeline as pl


def _config(ctx: click.Context) -> pl.RunConfig:
    o = ctx.obj
    base = pl.RunConfig.load(o["config"]) if o["config"] else pl.RunConfig()
    return base.with_overrides(seed=o["seed"], workdir=o["workdir"])


def _run(ctx: click.Context, fn, *args):
    try:
        cfg = _config(ctx)
        return fn(cfg, *args)
    except pl.ValidationError as e:
        click.echo(f"error: {e}", err=True)
        ctx.exit(2)
    except Exception as e:  # noqa: BLE001 - report and map to the runtime exit code
        logging.getLogger(__name__).debug("runtime failure", exc_info=True)
        click.echo(f"runtime error: {type(e).__name__}: {e}", err=True)
        ctx.exit(1)


@click.group()
@click.option("--config", "config", type=click.Path(dir_okay=False), default=None,
              help="RunConfig JSON file.")
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="Master seed.")
@click.option("--workdir", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--threads", type=click.IntRange(1), default=1, show_default=True,
              help="Worker processes for data generation; results do not depend on it.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress.")
@click.pass_context
def main(ctx, config, seed, workdir, threads, verbose):
    """Conformal capacity bidding pipeline."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config": config, "seed": seed, "workdir": workdir, "threads": threads}


@main.command()
@click.pass_context
def generate(ctx):
    """Sample prosumers and scenarios; write D and one D_beta per grid entry."""
    outs = _run(ctx, pl.run_generate, ctx.obj["threads"])
    click.echo(f"wrote {len(outs)} files")


@main.command("train")
@click.pass_context
def train_cmd(ctx):
    """Fit the MC dropout network on the training split."""
    model = _run(ctx, pl.run_train)
    e, tr, va = model.history[-1]
    click.echo(f"trained {e} epochs; final train MSE {tr:.4g}, val MSE {va:.4g}")


@main.command()
@click.pass_context
def calibrate(ctx):
    """Calibrate every conformal method on the calibration split."""
    cals = _run(ctx, pl.run_calibrate)
    for kind, c in cals.items():
        q = c.qhat if kind != "CCP" else f"{len(c.qhat)} hourly thresholds"
        click.echo(f"{kind}: qhat = {q}")
        if not c.finite:
            click.echo(f"warning: {kind} threshold is infinite", err=True)


@main.command()
@click.pass_context
def evaluate(ctx):
    """Score every method on the test split."""
    reports = _run(ctx, pl.run_evaluate)
    for r in reports:
        click.echo(",".join(r.row().values()))


@main.command()
@click.pass_context
def bid(ctx):
    """Bid, settle and sweep the revenue share on the D_beta sets."""
    reports = _run(ctx, pl.run_bid)
    for m, r in reports.items():
        click.echo(f"{m}: R {r.table['R']:.1f}%  R1 {r.table['R1']:.1f}%  R2 {r.table['R2']:.1f}%")


@main.command()
@click.pass_context
def report(ctx):
    """Write report.md from the evaluation and bidding tables."""
    click.echo(_run(ctx, pl.run_report), nl=False)


@main.command()
@click.pass_context
def run(ctx):
    """Run every step in order."""
    _run(ctx, pl.run_all, ctx.obj["threads"])
    click.echo(f"done; see {_config(ctx).root / 'report.md'}")


if __name__ == "__main__":
    sys.exit(main())
