"""Figures for the CLI report: convergence curves and the solution field.

Rendering is done with the non-interactive Agg backend so that the CLI works
headless; every function writes a PNG and returns its path.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
}


def convergence_figure(report, path: str | Path, title: str = "") -> Path:
    """Log-log plot of both error norms against ``N = M`` with a slope guide."""
    path = Path(path)
    N = np.array([r.N for r in report.rows], dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.4))
        if np.all(report.l2rho > 0):
            ax.loglog(N, report.l2rho, "o-", label=r"$\|\cdot\|_\rho$")
        if np.all(report.sup > 0):
            ax.loglog(N, report.sup, "s--", label=r"$E_{\sup}$")
        order = min(report.k, report.q + 1)
        if len(N) > 1 and np.all(report.l2rho > 0):
            guide = report.l2rho[0] * (N / N[0]) ** (-order)
            ax.loglog(N, guide, ":", color="grey", label=f"slope {order}")
        ax.set_xlabel("N = M")
        ax.set_ylabel("error")
        ax.set_title(title or f"(k, q) = ({report.k}, {report.q})")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def solution_figure(t, x, values, path: str | Path, labels=("u", "v")) -> Path:
    """Colour maps of every component on a ``(t, x)`` grid.

    ``values`` has shape ``(n, len(t), len(x))``.
    """
    path = Path(path)
    n = values.shape[0]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, n, figsize=(3.6 * n, 3.0), squeeze=False)
        for a, ax in enumerate(axes[0]):
            mesh = ax.pcolormesh(x, t, values[a], shading="auto", cmap="viridis")
            fig.colorbar(mesh, ax=ax)
            ax.set_xlabel("x")
            ax.set_ylabel("t")
            ax.set_title(labels[a] if a < len(labels) else f"U[{a}]")
            ax.grid(False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
