"""Command-line entry points: render figures from simulation run artifacts."""

from __future__ import annotations

import sys

import click

from .figures import (FigureSpec, plot_curves, plot_heatmap, plot_sweep,
                      plot_timeseries)
from .io import SchemaMismatch

EXIT_SCHEMA = 2


def _parse_inputs(pairs, multi=False):
    """``label=path`` options into the FigureSpec inputs dict."""
    inputs = {}
    for pair in pairs:
        label, _, path = pair.partition("=")
        if not path:
            label, path = path or f"run{len(inputs)}", pair
            label = f"run{len(inputs)}"
        if multi:
            inputs.setdefault(label, []).append(path)
        else:
            inputs[label] = path
    return inputs


def _render(fn, *args):
    try:
        fn(*args)
    except SchemaMismatch as exc:
        click.echo(f"schema mismatch: {exc}", err=True)
        sys.exit(EXIT_SCHEMA)


@click.group()
def main():
    """Render figures from placement-simulation logs."""


@main.command()
@click.option("--run", "runs", multiple=True, required=True,
              help="label=path/to/metrics.csv (repeatable)")
@click.option("--column", default="r_t", show_default=True)
@click.option("--window", default=1, show_default=True, type=int)
@click.option("--out", required=True)
def timeseries(runs, column, window, out):
    """Metric-over-time line chart, one series per run."""
    spec = FigureSpec("timeseries", _parse_inputs(runs), out=out,
                      window=window)
    _render(plot_timeseries, spec, column)


@main.command()
@click.option("--run", "runs", multiple=True, required=True,
              help="label=path/to/summary.json (repeat per x value)")
@click.option("--x", "x_key", required=True)
@click.option("--y", "y_key", required=True)
@click.option("--out", required=True)
def sweep(runs, x_key, y_key, out):
    """Summary means across a parameter sweep."""
    spec = FigureSpec("sweep", _parse_inputs(runs, multi=True), out=out)
    _render(plot_sweep, spec, x_key, y_key)


@main.command()
@click.option("--dump", "dumps", multiple=True, required=True,
              help="label=path/to/probability-dump.json (repeatable)")
@click.option("--out", required=True)
def heatmap(dumps, out):
    """Probability-matrix heatmap panels."""
    spec = FigureSpec("heatmap", _parse_inputs(dumps), out=out)
    _render(plot_heatmap, spec)


@main.command()
@click.option("--curve", "curves", multiple=True, required=True,
              help="label=path/to/model.curves.csv (repeatable)")
@click.option("--window", default=1, show_default=True, type=int)
@click.option("--out", required=True)
def curves(curves, window, out):
    """Training-loss curves."""
    spec = FigureSpec("curves", _parse_inputs(curves), out=out,
                      window=window)
    _render(plot_curves, spec)
