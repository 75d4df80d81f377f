"""Figure rendering for evaluation reports and the baseline matrix.

All figures are written straight to files (Agg backend); nothing opens a
display.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_error_trace(report, path) -> None:
    """Mean corner error as the map grows, one line per evaluation."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    if report.error_trace:
        counts = [row[0] for row in report.error_trace]
        per_marking = [row[1] for row in report.error_trace]
        cumulative = [row[2] for row in report.error_trace]
        ax.plot(counts, per_marking, "o", ms=3.5, alpha=0.55, label="per marking")
        ax.plot(counts, cumulative, "-", lw=1.8, label="running mean")
    ax.set_xlabel("markings in map")
    ax.set_ylabel("corner position error [m]")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _draw_quads(ax, quads, **kwargs):
    for quad in quads:
        closed = np.vstack([quad, quad[:1]])
        ax.plot(closed[:, 0], closed[:, 1], **kwargs)
        kwargs.pop("label", None)  # only label the first polygon


def save_map_overlay(estimated_quads, truth_quads, path, title=None) -> None:
    """Estimated (red) vs ground-truth (green) marking polygons."""
    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    _draw_quads(ax, truth_quads, color="tab:green", lw=1.4, label="ground truth")
    _draw_quads(ax, estimated_quads, color="tab:red", lw=1.1, label="estimated")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_matrix_chart(cells, path) -> None:
    """Grouped bars of RMSE per baseline and camera setup.

    `cells` maps (baseline, setup) -> dict with at least 'rmse'; failed cells
    may carry None.
    """
    baselines = sorted({b for b, _ in cells})
    setups = sorted({s for _, s in cells})
    width = 0.8 / max(len(setups), 1)
    fig, ax = plt.subplots(figsize=(6.4, 3.8))
    x = np.arange(len(baselines))
    for i, setup in enumerate(setups):
        vals = []
        for b in baselines:
            cell = cells.get((b, setup)) or {}
            rmse = cell.get("rmse")
            vals.append(rmse if rmse is not None else np.nan)
        ax.bar(x + i * width, vals, width=width * 0.95, label=setup)
    ax.set_xticks(x + width * (len(setups) - 1) / 2)
    ax.set_xticklabels(baselines)
    ax.set_ylabel("corner RMSE [m]")
    ax.grid(axis="y", alpha=0.3)
    ax.legend(fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
