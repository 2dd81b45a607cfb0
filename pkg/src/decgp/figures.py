"""Rendering of fit and training-trace figures next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["save_fit_figure", "save_trace_figure"]

_STYLE = {
    "figure.figsize": (6.0, 3.7),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def save_fit_figure(path, grid_x, mean, lo, hi, data_x=None, data_y=None):
    """Predictive mean with a two-sigma band, plus the observations if given."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.fill_between(grid_x, lo, hi, color="0.8", label="mean ± 2 sd")
        ax.plot(grid_x, mean, color="k", lw=1.5, label="predictive mean")
        if data_x is not None:
            ax.plot(data_x, data_y, "o", ms=3, mfc="none", color="C0", alpha=0.6,
                    label="observations")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.legend(loc="best", fontsize=8)
        fig.savefig(path)
        plt.close(fig)


def save_trace_figure(path, iterations, elbo_estimates):
    """Minibatch objective estimate against iteration."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(iterations, elbo_estimates, lw=0.8, color="C0")
        ax.set_xlabel("iteration")
        ax.set_ylabel("minibatch objective estimate")
        fig.savefig(path)
        plt.close(fig)
