"""Report figures, rendered off-screen to PNG files."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
}


def _vertices(grid):
    """Corner and centre vertices, a readable subset."""
    r, c = grid.shape
    return [(0, 0), (r // 2, c // 2), (r - 1, c - 1)]


def plot_trajectories(path, trajs, smoothed, outputs=None):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(trajs), 2, figsize=(9, 2.6 * len(trajs)), squeeze=False)
        for cam, T in enumerate(trajs):
            t = np.arange(T.n_frames)
            for k, ax in enumerate(axes[cam]):
                for n, (r, c) in enumerate(_vertices(T.grid)):
                    col = f"C{n}"
                    ax.plot(t, T.series[:, r, c, k], color=col, alpha=0.45, lw=0.9)
                    ax.plot(t, smoothed[cam].series[:, r, c, k], color=col, label=f"v({r},{c})")
                    if outputs is not None:
                        ax.plot(t, outputs[cam].series[:, r, c, k], color=col, ls=":", lw=1.0)
                ax.set_title(f"camera {cam}, {'xy'[k]}")
                ax.set_xlabel("frame")
                ax.set_ylabel("px")
        axes[0, 0].legend(loc="best", fontsize=7)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_energy(path, trace):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.semilogy(np.arange(len(trace)), trace, marker="o", ms=3)
        ax.set_xlabel("outer round")
        ax.set_ylabel("energy")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_per_frame(path, series):
    """One panel per metric; ``series`` maps a name to a list (or list of lists per camera)."""
    names = [k for k, v in series.items() if len(v)]
    if not names:
        return
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(names), 1, figsize=(7, 2.2 * len(names)), squeeze=False)
        for ax, name in zip(axes[:, 0], names):
            v = series[name]
            rows = v if isinstance(v[0], (list, tuple, np.ndarray)) else [v]
            for c, row in enumerate(rows):
                y = np.array([np.nan if x is None else x for x in row], float)
                ax.plot(np.arange(len(y)), y, label=f"camera {c}" if len(rows) > 1 else None)
            ax.set_ylabel(name)
            if len(rows) > 1:
                ax.legend(loc="best", fontsize=7)
        axes[-1, 0].set_xlabel("frame")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def write_figures(directory, result):
    os.makedirs(directory, exist_ok=True)
    from .pipeline import output_trajectories

    outs = output_trajectories(result.trajectories, result.warps)
    plot_trajectories(os.path.join(directory, "trajectories.png"), result.trajectories,
                      result.solution.smoothed, outs)
    if result.solution.energy_trace:
        plot_energy(os.path.join(directory, "energy.png"), result.solution.energy_trace)
    per = result.metrics.get("per_frame", {})
    if per:
        plot_per_frame(os.path.join(directory, "per_frame.png"), per)
