"""Figure builders over the simulation log formats.

Every builder returns ``(fig, axes)`` so callers (and tests) can inspect the
data layer directly; pass ``out`` to also write a static image.  Inputs are
never mutated and figures are deterministic given identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import (load_metrics, load_probability_dump, load_summary,
                 moving_average)

SWEEP_X_KEYS = ("arrival_rate", "mean_lifetime", "substrate_size")
SWEEP_Y_KEYS = ("mean_r_t", "accept_ratio", "mean_solve_ms")


@dataclass
class FigureSpec:
    """One figure request: labeled input files plus styling knobs."""

    kind: str  # "timeseries" | "sweep" | "heatmap"
    inputs: dict = field(default_factory=dict)  # series label -> path(s)
    out: str | None = None
    xlabel: str | None = None
    ylabel: str | None = None
    window: int = 1

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")


def _finish(fig, out):
    if out:
        fig.savefig(out)
    return fig


def plot_timeseries(spec: FigureSpec, column: str = "r_t"):
    """Multi-series line chart of one metrics column over simulated time.

    Each entry of ``spec.inputs`` maps a legend label (typically the placer
    name) to a ``metrics.csv`` path.  Smoothing is a trailing moving average
    of width ``spec.window``; empty logs render as an annotated empty axes.
    """
    fig, ax = plt.subplots()
    drew = False
    for label, path in spec.inputs.items():
        data = load_metrics(path)
        if data[column].size == 0:
            ax.annotate(f"warning: empty log for {label!r}",
                        xy=(0.5, 0.5), xycoords="axes fraction",
                        ha="center", color="tab:red")
            continue
        ax.plot(data["t"], moving_average(data[column], spec.window),
                label=label)
        drew = True
    ax.set_xlabel(spec.xlabel or "simulated time")
    ax.set_ylabel(spec.ylabel or column)
    if drew:
        ax.legend()
    return _finish(fig, spec.out), ax


def plot_sweep(spec: FigureSpec, x: str, y: str):
    """Line-with-markers chart of summary means across a parameter sweep.

    ``spec.inputs`` maps a legend label to a list of ``summary.json`` paths,
    one per x value.  Unreadable entries leave a gap (NaN) and a warning
    annotation instead of failing the whole figure.
    """
    if x not in SWEEP_X_KEYS:
        raise ValueError(f"x must be one of {SWEEP_X_KEYS}")
    if y not in SWEEP_Y_KEYS:
        raise ValueError(f"y must be one of {SWEEP_Y_KEYS}")
    fig, ax = plt.subplots()
    for label, paths in spec.inputs.items():
        xs, ys = [], []
        for path in paths:
            try:
                summary = load_summary(path)
                xs.append(float(summary[x]))
                ys.append(np.nan if summary[y] is None else float(summary[y]))
            except OSError:
                ax.annotate(f"warning: missing {path}", xy=(0.02, 0.02),
                            xycoords="axes fraction", color="tab:red",
                            fontsize=8)
                xs.append(np.nan)
                ys.append(np.nan)
        order = np.argsort(xs)
        ax.plot(np.array(xs)[order], np.array(ys)[order], marker="o",
                label=label)
    ax.set_xlabel(spec.xlabel or x)
    ax.set_ylabel(spec.ylabel or y)
    ax.legend()
    return _finish(fig, spec.out), ax


def plot_heatmap(spec: FigureSpec, annotate: bool = True):
    """Probability-matrix heatmaps, one panel per input dump.

    A two-entry ``spec.inputs`` (e.g. pre-trained vs fine-tuned checkpoints
    applied to the same workflow) renders side-by-side panels on a shared
    color scale.
    """
    dumps = {label: load_probability_dump(path)
             for label, path in spec.inputs.items()}
    if not dumps:
        raise ValueError("heatmap needs at least one probability dump")
    fig, axes = plt.subplots(1, len(dumps), squeeze=False,
                             figsize=(5 * len(dumps), 4))
    vmax = max(float(m.max()) if m.size else 1.0
               for _, _, m in dumps.values())
    for ax, (label, (rows, cols, matrix)) in zip(axes[0], dumps.items()):
        im = ax.imshow(matrix, vmin=0.0, vmax=vmax, aspect="auto",
                       cmap="viridis")
        ax.set_title(label)
        ax.set_xlabel(spec.xlabel or "substrate node")
        ax.set_ylabel(spec.ylabel or "agent")
        ax.set_xticks(range(len(cols)), labels=[str(c) for c in cols],
                      fontsize=7)
        ax.set_yticks(range(len(rows)), labels=[str(r) for r in rows],
                      fontsize=7)
        if annotate and matrix.size and matrix.size <= 400:
            for i in range(matrix.shape[0]):
                for j in range(matrix.shape[1]):
                    ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center",
                            va="center", fontsize=6, color="w")
    fig.colorbar(im, ax=[a for a in axes[0]], fraction=0.03)
    return _finish(fig, spec.out), axes[0]


def plot_curves(spec: FigureSpec):
    """Training-curve chart from a ``*.curves.csv`` file per label."""
    from .io import load_curves
    fig, ax = plt.subplots()
    for label, path in spec.inputs.items():
        for series, (steps, values) in load_curves(path).items():
            ax.plot(steps, moving_average(values, spec.window),
                    label=f"{label}:{series}" if label else series)
    ax.set_xlabel(spec.xlabel or "step")
    ax.set_ylabel(spec.ylabel or "loss")
    ax.legend()
    return _finish(fig, spec.out), ax
