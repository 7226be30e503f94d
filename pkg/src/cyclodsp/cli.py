"""Command-line entry point: ``cyclodsp {sysid-sweep,scd-maps,waveforms}``."""

from __future__ import annotations

import logging
import time

import click

from . import harness
from .errors import ConfigError


def _config(kind, config_path, **overrides):
    if config_path:
        cfg = harness.load_config(config_path)
        if cfg.kind != kind:
            cfg = cfg.replace(kind=kind)
    else:
        cfg = harness.ExperimentConfig(kind=kind)
    return cfg.replace(**overrides)


def _common(f):
    f = click.option("--force", is_flag=True, help="Overwrite results of a different config.")(f)
    f = click.option("--seed", type=int, default=None, help="Master seed.")(f)
    f = click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True,
                     help="Output directory.")(f)
    f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     default=None, help="Flat TOML config file.")(f)
    return f


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Cyclostationary harmonic models and cyclic system identification."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("sysid-sweep")
@_common
@click.option("--trials", type=int, default=None)
@click.option("--estimate-f0/--oracle-f0", default=None,
              help="Track f0 on the clean excitation instead of using ground truth.")
@click.option("--eval-bins", type=click.Choice(["harmonics", "all"]), default=None)
@click.option("--wav-dir", type=click.Path(file_okay=False), default=None,
              help="Use voiced recordings from this directory as excitation.")
@click.option("--workers", type=int, default=None)
def sysid_sweep(config_path, out_dir, seed, force, trials, estimate_f0, eval_bins, wav_dir,
                workers):
    """RMSE of the Wiener and cyclic estimators across a sweep."""
    try:
        cfg = _config("sysid_sweep", config_path, seed=seed, trials=trials,
                      estimate_f0=estimate_f0, eval_bins=eval_bins, wav_dir=wav_dir,
                      excitation="wav" if wav_dir else None, workers=workers)
        out = harness.prepare_out_dir(out_dir, cfg, force)
        res = harness.run_sysid_sweep(cfg)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    res.write(out)
    harness.write_meta(out, cfg, res.started, res.finished)
    for pt in res.points:
        click.echo(f"{cfg.sweep_axis}={pt['value']}: wiener {pt['wiener']['mean']:.4f}  "
                   f"cyclic {pt['cyclic']['mean']:.4f}  p={pt['p_value_cyclic_better']:.3g}")


@main.command("scd-maps")
@_common
@click.option("--realizations", type=int, default=None)
@click.option("--wav", "wav_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Optional voiced recording to map alongside the models.")
def scd_maps(config_path, out_dir, seed, force, realizations, wav_path):
    """Single-realization and averaged cyclic-spectrum maps."""
    try:
        cfg = _config("scd_maps", config_path, seed=seed, realizations=realizations,
                      wav_path=wav_path)
        out = harness.prepare_out_dir(out_dir, cfg, force)
        started = time.time()
        res = harness.run_scd_maps(cfg)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    harness.write_scd_maps(cfg, res, out)
    harness.write_meta(out, cfg, started, time.time())
    for key, value in res["diagnostics"].items():
        click.echo(f"{key}: {value}")


@main.command("waveforms")
@_common
@click.option("--wav", "wav_path", type=click.Path(exists=True, dir_okay=False), default=None)
def waveforms(config_path, out_dir, seed, force, wav_path):
    """Random-phase frames versus a single random-amplitude record."""
    try:
        cfg = _config("waveforms", config_path, seed=seed, wav_path=wav_path)
        out = harness.prepare_out_dir(out_dir, cfg, force)
        started = time.time()
        res = harness.run_waveforms(cfg)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    harness.write_waveforms(cfg, res, out)
    harness.write_meta(out, cfg, started, time.time())
    click.echo(f"wrote {out / 'results.csv'}")


if __name__ == "__main__":
    main()
