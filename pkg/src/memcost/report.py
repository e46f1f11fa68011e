"""Figure rendering for cost analyses.

Every function writes a PNG next to the delimited output produced by the
corresponding CLI command. The Agg backend is forced so rendering works
headless; figures are closed after saving to keep long runs bounded.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .cost_model import CostCurve, HeatmapGrid, SensitivityRow
from .errors import InvalidInputError

__all__ = ["render_cost_curves", "render_breakeven", "render_heatmap"]

_DPI = 150


def render_cost_curves(curve: CostCurve, path: str | Path) -> Path:
    """Plot both cumulative cost curves against turn count."""
    path = Path(path)
    xs = [p.n for p in curve.points]
    mem = [float(p.memory.dollars()) for p in curve.points]
    lc = [float(p.long_context.dollars()) for p in curve.points]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(xs, mem, marker="o", markersize=3, linewidth=1.5, label="memory system")
    ax.plot(xs, lc, marker="s", markersize=3, linewidth=1.5, label="long-context window")
    ax.set_xlabel("Conversation turns")
    ax.set_ylabel("Cumulative cost (USD)")
    ax.set_title(f"Cumulative inference cost (L = {curve.context_tokens:,} tokens)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def render_breakeven(rows: list[SensitivityRow], path: str | Path) -> Path:
    """Plot the break-even turn count against context length."""
    if not rows:
        raise InvalidInputError("at least one row is required")
    path = Path(path)
    xs = [row.context_tokens for row in rows]
    ys = [row.n_be for row in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    finite = [(x, y) for x, y in zip(xs, ys) if y is not None]
    if finite:
        ax.plot([x for x, _ in finite], [y for _, y in finite], marker="o", linewidth=1.5, color="tab:blue")
    missing = [x for x, y in zip(xs, ys) if y is None]
    for x in missing:
        ax.axvline(x, color="tab:red", linestyle=":", alpha=0.6)
    ax.set_xlabel("Context length (tokens)")
    ax.set_ylabel("Break-even turn count")
    ax.set_title("Turns until the memory system becomes cheaper")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def render_heatmap(grid: HeatmapGrid, path: str | Path) -> Path:
    """Plot long-context-minus-memory cost difference over the (N, L) plane.

    Diverging palette centred at zero: blue where the memory system is the
    cheaper architecture, red where the long-context window is. The
    break-even boundary is overlaid in black where it exists.
    """
    path = Path(path)
    diff = np.array(
        [[float(cell.dollars()) for cell in row] for row in grid.diff],
        dtype=np.float64,
    )
    span = float(np.max(np.abs(diff))) or 1.0
    fig, ax = plt.subplots(figsize=(7.5, 5.5))
    mesh = ax.pcolormesh(
        np.asarray(grid.n_values),
        np.asarray(grid.l_values),
        diff,
        cmap="RdBu",
        vmin=-span,
        vmax=span,
        shading="nearest",
    )
    boundary = [(l, n) for l, n in grid.boundary if n is not None]
    if boundary:
        ax.plot(
            [n for _, n in boundary],
            [l for l, _ in boundary],
            color="black",
            linewidth=1.8,
            drawstyle="steps-mid",
            label="break-even",
        )
        ax.legend(loc="upper right")
    fig.colorbar(mesh, ax=ax, label="long-context minus memory cost (USD; blue = memory cheaper)")
    ax.set_xlabel("Conversation turns (N)")
    ax.set_ylabel("Context length (tokens, L)")
    ax.set_title("Where a memory system beats a long-context window")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
