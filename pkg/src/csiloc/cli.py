"""Command-line interface.

Exit codes: 0 ok, 2 invalid spec/config, 3 data problem (missing artifacts,
digest mismatch, malformed files), 4 training failure.
"""

from __future__ import annotations

import functools
import sys

import click

from . import harness
from .errors import (ConfigError, CsilocError, DataError, NumericsError,
                     ShapeError, TrainingError, UsageError)

_EXIT_CODES = (
    (ConfigError, 2), (UsageError, 2), (ShapeError, 2),
    (DataError, 3),
    (TrainingError, 4), (NumericsError, 4),
)


def _exit_code(exc):
    for etype, code in _EXIT_CODES:
        if isinstance(exc, etype):
            return code
    return 1


def _command(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except (CsilocError, FileNotFoundError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(3 if isinstance(e, FileNotFoundError) else _exit_code(e))
    return wrapper


def _load_spec(path):
    return harness.ExperimentSpec.load(path)


@click.group()
def main():
    """Synthetic WiFi CSI localization testbed."""


@main.command("gen")
@click.option("--spec", "scenario", required=True,
              help="Scenario JSON file or preset name (scen1/scen1_obstacle/scen2/scen3).")
@click.option("--samples-per-rp", type=int, default=8, show_default=True)
@click.option("--out", required=True, help="Output directory.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@_command
def gen(scenario, samples_per_rp, out, seed):
    """Generate a synthetic CSI dataset for one scenario."""
    path = harness.cmd_gen(scenario, samples_per_rp, out, seed=seed)
    click.echo(f"wrote {path}")


@main.command("train-meta")
@click.option("--spec", required=True, help="Experiment spec JSON.")
@click.option("--out", required=True)
@click.option("--seed", type=int, default=None)
@_command
def train_meta(spec, out, seed):
    """Meta-train scenario-specific parameters into a scenario bank."""
    bank_dir = harness.cmd_train_meta(_load_spec(spec), out, seed=seed)
    click.echo(f"bank at {bank_dir}")


@main.command("embed")
@click.option("--spec", required=True)
@click.option("--bank", required=True, help="Bank directory from train-meta.")
@_command
def embed(spec, bank):
    """Train the graph autoencoder and store scenario embeddings."""
    harness.cmd_embed(_load_spec(spec), bank)
    click.echo(f"embeddings stored in {bank}")


@main.command("finetune")
@click.option("--spec", required=True)
@click.option("--bank", required=True)
@click.option("--out", required=True)
@click.option("--seed", type=int, default=None)
@_command
def finetune(spec, bank, out, seed):
    """Select the most similar scenario and fine-tune on new support data."""
    out_dir = harness.cmd_finetune(_load_spec(spec), bank, out, seed=seed)
    click.echo(f"adapted model at {out_dir}")


@main.command("eval")
@click.option("--spec", required=True)
@click.option("--model", required=True, help="Directory from finetune.")
@click.option("--out", required=True)
@click.option("--seed", type=int, default=None)
@click.option("--data", default=None, help="Optional .csid dataset to evaluate on.")
@_command
def eval_cmd(spec, model, out, seed, data):
    """Evaluate an adapted model; writes metrics.json."""
    rec = harness.cmd_eval(_load_spec(spec), model, out, seed=seed, data_path=data)
    click.echo(f"mean error {rec.mean_error:.3f} m (std {rec.std_error:.3f})")


@main.command("sweep")
@click.option("--spec", required=True)
@click.option("--out", required=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@_command
def sweep(spec, out, jobs):
    """Run the configured device/budget/method sweeps over all seeds."""
    records = harness.run_sweep(_load_spec(spec), out, jobs=jobs)
    click.echo(f"{len(records)} sweep cells written under {out}")


@main.command("report")
@click.option("--runs", required=True, help="Directory holding sweep/comparison runs.")
@click.option("--out", required=True)
@_command
def report(runs, out):
    """Aggregate metrics records into plot-ready CSV tables."""
    written = harness.write_reports(runs, out)
    click.echo("wrote " + ", ".join(written))


if __name__ == "__main__":
    main()
