"""Matplotlib renderings of the report outputs (written next to the CSVs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_region(re, im, rho, path, title=""):
    """Stability region: shaded rho <= 1 set plus the rho = 1 contour."""
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    finite = np.where(np.isfinite(rho), rho, np.nanmax(rho[np.isfinite(rho)], initial=2.0))
    ax.contourf(re, im, finite, levels=[0.0, 1.0], colors=["0.8"])
    ax.contour(re, im, finite, levels=[1.0], colors="k", linewidths=1.5)
    ax.axhline(0.0, color="0.5", lw=0.5)
    ax.axvline(0.0, color="0.5", lw=0.5)
    ax.set_xlabel("Re(z)")
    ax.set_ylabel("Im(z)")
    if title:
        ax.set_title(title)
    ax.set_aspect("equal", adjustable="box")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_convergence(dts, errors, path, title="", reference_order=None):
    """Error-vs-dt plot on log axes with an optional reference slope."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    dts = np.asarray(dts, dtype=float)
    pts = [(dt, e) for dt, e in zip(dts, errors) if e is not None and e > 0]
    if pts:
        xs, ys = zip(*pts)
        ax.loglog(xs, ys, "o-", color="k", label="measured")
        if reference_order:
            ref = ys[0] * (np.array(xs) / xs[0]) ** reference_order
            ax.loglog(xs, ref, "--", color="0.6", label=f"order {reference_order}")
        ax.legend()
    ax.set_xlabel("dt")
    ax.set_ylabel("relative error")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
