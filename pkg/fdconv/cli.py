"""
Command line interface: ``fdconv check | train | analyze | bench``.
"""
from functools import wraps
from pathlib import Path

import click
import pandas as pd

from . import analysis, logging
from .bench import bench
from .checkpoint import load_checkpoint, save_checkpoint
from .checks import SUITES, checkpoint_checks, run_checks
from .config import load_config, render_config
from .data import gen_band_dataset, split_indices
from .layer import fdconv_forward
from .numerics import ConsistencyError
from .train import TrainingDiverged, compare, evaluate, layer_state, make_dataset, train

CHECKPOINT_FILE = "checkpoint.fdcv"


def handle_errors(fn):
    """
    Report expected failures as a one-line message with exit status 1.
    """

    @wraps(fn)
    def decorated(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConsistencyError, TrainingDiverged, OSError, ValueError) as ex:
            raise click.ClickException(str(ex))

    return decorated


def make_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as ex:
        raise OSError(f"cannot create output directory {path}: {ex.strerror}") from ex
    return path


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log every step at DEBUG level.")
def cli(verbose):
    """
    Frequency dynamic convolution toolkit.
    """
    logging.setup(verbose)


@cli.command()
@click.option(
    "--suite", type=click.Choice(["all", *SUITES]), default="all", show_default=True
)
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def check(suite, seed):
    """
    Run invariant check suites.
    """
    results = run_checks(suite, seed)
    failed = [r for r in results if not r.passed]
    click.echo(f"{len(results) - len(failed)}/{len(results)} checks passed")
    for r in failed:
        click.echo(f"FAIL {r.suite}/{r.name}: {r.value:.3e} > {r.threshold:.1e}")
    if failed:
        raise SystemExit(1)


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option(
    "--compare", "with_baseline", is_flag=True, help="Also train the static baseline."
)
@handle_errors
def train_command(config_path, out, with_baseline):
    """
    Train the toy network and save its checkpoint and metric log.
    """
    config = load_config(config_path)
    out = make_dir(out)
    dataset = make_dataset(config)
    _, held_idx = split_indices(dataset.count)

    if with_baseline:
        checkpoints = compare(config, dataset)
    else:
        checkpoints = {config.model: train(config, dataset)}

    (out / "config.cfg").write_text(render_config(config))
    for model, checkpoint in checkpoints.items():
        name = CHECKPOINT_FILE if model == config.model else f"{model}.fdcv"
        save_checkpoint(checkpoint, out / name)
        metrics = checkpoint.metric_log()
        metrics.to_csv(out / f"metrics_{model}.csv", index=False, float_format="%.17g")
        accuracy = evaluate(checkpoint, dataset, held_idx).accuracy
        click.echo(f"{model}: held-out accuracy {accuracy:.4f}")


@cli.command()
@click.option("--checkpoint", "path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--pad", type=int, default=analysis.DEFAULT_PAD, show_default=True)
@handle_errors
def analyze(path, out, pad):
    """
    Write frequency-response, similarity and band reports of a checkpoint.
    """
    checkpoint = load_checkpoint(path)
    config = checkpoint.config
    layer = config.layer
    out = make_dir(out)

    if config.model == "fdconv":
        state = layer_state(checkpoint.tensors, config)
        weights = state.weights()
    else:
        state = None
        weights = checkpoint.tensors["static.weight"][None]

    tables = {"band_energy.csv": analysis.band_energy_profile(weights, pad, layer.bands)}
    extra = []
    if state is not None and layer.enable_fbm:
        count = layer.band_count
        sample = gen_band_dataset(config.seed, count, config.dataset_s, layer.bands, 0.0)
        _, modulation = fdconv_forward(sample.images, state, return_state=True)
        masks = layer.masks(config.dataset_s, config.dataset_s)
        energies = []
        for i in range(count):
            extra.extend(
                analysis.export_modulation_maps(modulation.bands[i], out, f"sample{i}")
            )
            energy = analysis.feature_band_energy(
                sample.images[i], modulation.bands[i], masks
            )
            energies.append(energy.assign(sample=i).reset_index())
        tables["feature_bands.csv"] = pd.concat(energies, ignore_index=True)

    checks = checkpoint_checks(checkpoint)
    files = analysis.export_report(
        out,
        weights,
        config=render_config(config),
        pad=pad,
        checks=checks,
        tables=tables,
        extra_files=extra,
    )
    click.echo(f"{len(files)} files written to {out}")
    if not all(c.passed for c in checks):
        raise SystemExit(1)


@cli.command("bench")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--repeats", type=int, default=5, show_default=True)
@handle_errors
def bench_command(config_path, repeats):
    """
    Time direct vs Fourier convolution and both FBM paths.
    """
    table = bench(load_config(config_path), repeats=repeats)
    with pd.option_context("display.float_format", "{:.3e}".format):
        click.echo(table.to_string())


def main():
    cli(prog_name="fdconv")
