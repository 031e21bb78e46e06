"""Figures written next to the CSV output of the command-line runner.

Uses the non-interactive Agg backend; every function saves to a file and
closes its figure.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["STYLE", "plot_objective", "plot_relative_decrease", "save_image"]

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.3,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_objective(trace, path, title=None):
    """Objective value and ``-Delta_k`` against the outer iteration."""
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        f = trace.f_values
        ax1.plot(np.arange(f.size), f)
        ax1.set_xlabel("iteration k")
        ax1.set_ylabel("f(x_k)")
        d = -trace.column("delta")
        ax2.semilogy(np.arange(d.size), np.maximum(d, np.finfo(float).tiny))
        ax2.set_xlabel("iteration k")
        ax2.set_ylabel("-Delta_k")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_relative_decrease(curves, path, xlabel="iteration k"):
    """Semilog plot of relative decrease curves.

    `curves` maps a legend label to ``(x_values, rel_decrease)``.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, (xs, rel) in curves.items():
            rel = np.asarray(rel, dtype=float)
            # nonpositive values occur once a run undercuts the stored f*
            ax.semilogy(xs, np.where(rel > 0, rel, np.nan), label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("(f(x_k) - f*) / (f(x_0) - f*)")
        ax.legend()
        return _save(fig, path)


def save_image(img, path, title=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.6))
        im = ax.imshow(img, cmap="gray", interpolation="nearest")
        ax.set_axis_off()
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        if title:
            ax.set_title(title)
        return _save(fig, path)
