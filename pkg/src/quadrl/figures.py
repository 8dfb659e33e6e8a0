"""Matplotlib renderings of the evaluation artifacts.

Every figure lands next to its CSV counterpart; the delimited files stay
the canonical output and these are quick-look views of the same data.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def save_expectation_figure(emap, path, title: str = "Success expectation") -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 5))
    data = np.ma.masked_invalid(emap.expectation)
    im = ax.pcolormesh(emap.diameters, emap.masses, data, vmin=0.0, vmax=1.0,
                       shading="auto", cmap="viridis")
    fig.colorbar(im, ax=ax, label="expectation of success")
    ax.set_xlabel("propeller diameter (in)")
    ax.set_ylabel("vehicle mass (kg)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_heatmap_figure(counts: np.ndarray, bounds, path,
                        plane: str = "XY", title: str = "Route heatmap") -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 5))
    peak = counts.max()
    normalized = counts / peak if peak > 0 else counts
    lo, hi = bounds
    im = ax.imshow(normalized, origin="lower", extent=(lo, hi, lo, hi),
                   cmap="magma", aspect="equal")
    fig.colorbar(im, ax=ax, label="relative occupancy")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)" if plane.upper() == "XY" else "z (m)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_training_curves(rows: list[dict], path, smooth: int = 50) -> None:
    """Return and mean position error per episode with a moving average."""
    plt = _plt()
    episodes = np.array([r["episode"] for r in rows], dtype=float)
    returns = np.array([r["return"] for r in rows], dtype=float)
    errors = np.array([r["mean_position_error"] for r in rows], dtype=float)

    def moving(x):
        if len(x) < 2:
            return x
        k = min(smooth, len(x))
        kernel = np.ones(k) / k
        return np.convolve(x, kernel, mode="valid")

    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    axes[0].plot(episodes, returns, alpha=0.3, lw=0.7)
    ma = moving(returns)
    axes[0].plot(episodes[len(episodes) - len(ma):], ma, lw=1.8)
    axes[0].set_ylabel("episode return")
    axes[1].plot(episodes, errors, alpha=0.3, lw=0.7)
    ma = moving(errors)
    axes[1].plot(episodes[len(episodes) - len(ma):], ma, lw=1.8)
    axes[1].set_ylabel("mean position error (m)")
    axes[1].set_xlabel("episode")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
