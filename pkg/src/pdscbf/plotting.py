"""Figure output for sweeps: distance versus alpha and trajectory overlays."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "pdscbf"

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def distance_vs_alpha(sweep, path, title=None):
    """Log-log plot of the sup-distance to the PDS reference against alpha (SVG)."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    d = np.asarray(sweep.sup_distances, dtype=float)
    a = np.asarray(sweep.alphas, dtype=float)
    pos = d > 0
    ax.loglog(a[pos], d[pos], "o-", color="tab:blue", label="sup distance on [0, T']")
    if sweep.reference_scheme_gap > 0:
        ax.axhline(sweep.reference_scheme_gap, color="gray", ls="--", lw=1, label="reference dt/2 gap")
    ax.set_xlabel("alpha")
    ax.set_ylabel("max |cbf - pds|")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def trajectory_overlay(sweep, path, title=None):
    """Controller states over time: PDS reference in black, one colour per alpha (PNG)."""
    ref = sweep.reference
    n = ref.xs.shape[1]
    fig, axes = plt.subplots(n, 1, figsize=(6.0, 2.4 * n), sharex=True, squeeze=False)
    cmap = plt.get_cmap("viridis")
    k = len(sweep.alphas)
    for i in range(n):
        ax = axes[i, 0]
        for j, (alpha, tr) in enumerate(zip(sweep.alphas, sweep.trajectories)):
            ax.plot(tr.times, tr.xs[:, i], color=cmap(j / max(1, k - 1)), lw=1.2, label=f"cbf alpha={alpha:g}")
        ax.plot(ref.times, ref.xs[:, i], color="black", ls="--", lw=1.2, label="pds")
        ax.set_ylabel(f"x{i + 1}")
        ax.grid(True, alpha=0.3)
    axes[0, 0].legend(fontsize=7, ncol=2)
    axes[-1, 0].set_xlabel("t")
    if title:
        axes[0, 0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path
