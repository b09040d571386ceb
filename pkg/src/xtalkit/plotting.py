"""Figure rendering for report paths (PNG files next to CSV/JSON outputs).

Uses the object-oriented matplotlib API with the Agg canvas so rendering
works headless and leaves no global state behind.
"""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

__all__ = ["scaling_figure", "diffusion_figure", "metrics_figure"]


def _save(fig: Figure, path) -> None:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=130, metadata={"Software": "xtalkit"})


def scaling_figure(points, fit, path) -> None:
    """Log-log boundary-loss ratio vs token count with the fitted line."""
    tokens = np.array([p.tokens for p in points], dtype=float)
    ratios = np.array([p.ratio for p in points], dtype=float)
    fig = Figure(figsize=(6.0, 4.5))
    ax = fig.add_subplot(111)
    ax.loglog(tokens, ratios, "o", ms=4, alpha=0.45, label="crops")
    grid = np.geomspace(tokens.min(), tokens.max(), 64)
    ax.loglog(grid, np.exp(fit.intercept) * grid ** fit.slope, "-",
              color="crimson",
              label=f"fit: slope {fit.slope:.3f} (r$^2$ {fit.r_squared:.3f})")
    ax.loglog(grid, np.exp(fit.intercept) * grid ** (-1 / 3), "--",
              color="gray", label="reference $T^{-1/3}$")
    ax.set_xlabel("crop tokens T")
    ax.set_ylabel("boundary loss per token")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def diffusion_figure(samples, target_means, path) -> None:
    """Histogram (1D) or scatter (2D+) of sampled points with mode markers."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    means = np.atleast_2d(np.asarray(target_means, dtype=float))
    fig = Figure(figsize=(6.0, 4.5))
    ax = fig.add_subplot(111)
    if samples.shape[1] == 1:
        ax.hist(samples[:, 0], bins=120, density=True, alpha=0.7)
        for m in means[:, 0]:
            ax.axvline(m, color="crimson", ls="--", lw=1)
        ax.set_xlabel("x")
        ax.set_ylabel("density")
    else:
        stride = max(1, len(samples) // 20_000)
        ax.plot(samples[::stride, 0], samples[::stride, 1], ".", ms=2,
                alpha=0.3)
        ax.plot(means[:, 0], means[:, 1], "x", color="crimson", ms=10, mew=2)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_aspect("equal")
    fig.tight_layout()
    _save(fig, path)


def metrics_figure(record, path) -> None:
    """Bar chart of the six aggregate metrics."""
    names = ["Col_S", "Pac_S", "Pac_C", "Rec_S", "Rec_C", "Sol_C"]
    values = [record.col_s, record.pac_s, record.pac_c,
              record.rec_s, record.rec_c, record.sol_c]
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot(111)
    bars = ax.bar(names, values, color=["#888"] + ["#4878b0"] * 5)
    for bar, v in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, v + 0.01, f"{v:.3f}",
                ha="center", fontsize=8)
    ax.set_ylim(0, 1.1)
    ax.set_ylabel("rate")
    fig.tight_layout()
    _save(fig, path)
