"""Figures for simulation reports.

Figures are built on ``matplotlib.figure.Figure`` directly and written
through the Agg canvas, so importing this module never touches the
global pyplot backend.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}


def figsize(scale: float = 1.0, aspect: float = 0.62) -> tuple[float, float]:
    width = 6.0 * scale
    return width, width * aspect


def _new(scale=1.0, aspect=0.62):
    fig = Figure(figsize=figsize(scale, aspect))
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, dpi=120, metadata={"Software": None})
    return path


def group_bars(
    runs: Mapping[str, Mapping[str, tuple[float, float]]],
    ylabel: str,
    path,
    target: float | None = None,
) -> Path:
    """Grouped bar chart with 2-se error bars.

    ``runs`` maps a series label (e.g. ``"group, a=0.1"``) to
    ``{group: (mean, se)}``.  A dashed line marks ``target`` when given.
    """
    with mpl.rc_context(STYLE):
        return _group_bars(runs, ylabel, path, target)


def _group_bars(runs, ylabel, path, target):
    fig, ax = _new()
    groups = sorted({g for r in runs.values() for g in r})
    x = np.arange(len(groups))
    width = 0.8 / max(1, len(runs))
    for i, (label, r) in enumerate(runs.items()):
        mean = [r.get(g, (np.nan, 0.0))[0] for g in groups]
        err = [2 * r.get(g, (np.nan, 0.0))[1] for g in groups]
        ax.bar(x + (i - (len(runs) - 1) / 2) * width, mean, width, yerr=err, capsize=2, label=label)
    if target is not None:
        ax.axhline(target, color="k", ls="--", lw=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(groups)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    return _save(fig, path)


def gap_curve(mse: Sequence[float], gap: Sequence[float], sigma: Sequence[float], path, tau: float) -> Path:
    """Retention gap against scorer MSE, one marker per noise level."""
    with mpl.rc_context(STYLE):
        return _gap_curve(mse, gap, sigma, path, tau)


def _gap_curve(mse, gap, sigma, path, tau):
    fig, ax = _new(0.8)
    ax.plot(mse, gap, "o-", color="C0")
    for m, g, s in zip(mse, gap, sigma):
        ax.annotate(f"$\\sigma$={s:g}", (m, g), textcoords="offset points", xytext=(4, -10), fontsize=7)
    ax.set_xlabel("MSE vs oracle")
    ax.set_ylabel(f"retention gap at $\\tau$={tau:g}")
    return _save(fig, path)
