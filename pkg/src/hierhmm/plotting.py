"""Matplotlib figures written next to the CSV reports."""

import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}

STATE_COLORS = ["#e69f00", "#56b4e9", "#009e73", "#f0e442", "#0072b2", "#d55e00", "#cc79a7"]


def figure_bytes(fig):
    """PNG bytes of ``fig`` (no timestamp metadata, so output is reproducible)."""
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()


def density_figure(name, grid, densities, zero_masses=None, weights=None, xlabel=None):
    """State-dependent densities of one variable; point masses at zero drawn as bars."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        n = densities.shape[1]
        w = np.ones(n) if weights is None else np.asarray(weights)
        for i in range(n):
            ax.plot(grid, w[i] * densities[:, i], color=STATE_COLORS[i % len(STATE_COLORS)], label=f"state {i + 1}")
        if weights is not None:
            ax.plot(grid, densities @ w, color="k", ls="--", lw=1, label="total")
        if zero_masses is not None:
            width = (grid[-1] - grid[0]) / 80
            heights = w * zero_masses
            ax2 = ax.twinx()
            ax2.bar(
                (np.arange(n) - (n - 1) / 2) * width, heights, width=width,
                color=[STATE_COLORS[i % len(STATE_COLORS)] for i in range(n)], alpha=0.6,
            )
            ax2.set_ylabel("point mass at 0")
            ax2.set_ylim(0, max(1e-12, heights.max()) * 1.2)
        ax.set_xlabel(xlabel or name)
        ax.set_ylabel("density" if weights is None else "weighted density")
        ax.set_title(name)
        ax.legend(frameon=False)
        fig.tight_layout()
    return figure_bytes(fig)


def decoded_figure(data, decoded, max_segments=None):
    """Observations colored by decoded production state; segment edges as grey lines."""
    m = data.m_segments if max_segments is None else min(max_segments, data.m_segments)
    y = np.vstack(data.segments[:m])
    states = np.concatenate(decoded.production[:m])
    edges = np.cumsum(data.lengths[:m])[:-1]
    r = len(data.names)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(r + 1, 1, figsize=(8.0, 1.6 * (r + 1)), sharex=True, squeeze=False)
        t = np.arange(y.shape[0])
        colors = np.array(STATE_COLORS)[states % len(STATE_COLORS)]
        for j, ax in enumerate(axes[:r, 0]):
            ax.scatter(t, y[:, j], c=colors, s=4)
            ax.set_ylabel(data.names[j])
        ax = axes[r, 0]
        starts = np.concatenate([[0], edges])
        ax.step(starts, decoded.internal[:m] + 1, where="post", color="k")
        ax.set_ylabel("internal state")
        ax.set_yticks(np.arange(1, decoded.internal.max() + 2))
        ax.set_xlabel("observation")
        for a in axes[:, 0]:
            for e in edges:
                a.axvline(e, color="0.85", lw=0.5, zorder=0)
        fig.tight_layout()
    return figure_bytes(fig)
