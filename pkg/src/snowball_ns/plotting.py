"""Rendering of run-trace figures to image files.

Uses matplotlib's object-oriented API with the Agg canvas, so no backend
or display is required and no pyplot global state is touched.
"""

from __future__ import annotations

import os
from typing import Optional, Sequence


def render_trace_figure(
    iterations: Sequence[int],
    log_z: Sequence[float],
    log_z_err: Sequence[float],
    path: str | os.PathLike,
    fit_log_z: Optional[Sequence[float]] = None,
    fit_label: Optional[str] = None,
    title: Optional[str] = None,
) -> None:
    """Plot the evidence trace (with error bars and optional fitted curve)
    and write it to ``path``; the format follows the file extension."""
    from matplotlib.backends.backend_agg import FigureCanvasAgg
    from matplotlib.figure import Figure

    fig = Figure(figsize=(6.4, 4.2))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    ax.errorbar(
        iterations,
        log_z,
        yerr=log_z_err,
        fmt="o-",
        markersize=3.5,
        capsize=2.5,
        linewidth=1.0,
        label="estimate",
    )
    if fit_log_z is not None:
        ax.plot(
            iterations,
            fit_log_z,
            "--",
            linewidth=1.2,
            label=fit_label or "fit",
        )
    ax.set_xlabel("outer iteration")
    ax.set_ylabel(r"$\ln Z$")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
