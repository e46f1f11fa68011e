"""Cumulative-cost model for memory-backed versus long-context chat deployments.

Both architectures are priced over an n-turn dialogue against a fixed context of
L tokens. The long-context deployment pays the full input rate once and the
provider's cached-input rate on every later turn, plus a flat completion charge
per turn. The memory deployment pays a one-time write (extract + embed, priced
per context token) and a flat retrieval-and-answer charge per turn. Both curves
are affine in n, so the break-even turn has a closed form that the search-based
finder is tested against.

Default rates are calibrated for a GPT-5-mini-class deployment; see README.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

from .core import TOKENS_PER_UNIT, Money
from .errors import InvalidInputError

__all__ = [
    "CostParams",
    "CostPoint",
    "CostCurve",
    "BreakEvenResult",
    "SensitivityRow",
    "GridRange",
    "HeatmapGrid",
    "default_cost_params",
    "lc_cost",
    "mem_cost",
    "break_even",
    "break_even_closed_form",
    "cost_curve",
    "sensitivity_table",
    "heatmap_grid",
    "write_cost_curve_csv",
    "write_sensitivity_csv",
    "write_heatmap_csv",
    "write_boundary_csv",
    "write_heatmap_pgm",
]

DEFAULT_LC_INPUT_PER_MTOK = Money.from_dollars("0.25")
DEFAULT_LC_CACHED_PER_MTOK = Money.from_dollars("0.025")
DEFAULT_LC_OUTPUT_PER_TURN = Money.from_dollars("0.00106")
DEFAULT_WRITE_PER_MTOK = Money.from_dollars("0.4295")
DEFAULT_READ_PER_TURN = Money.from_dollars("0.0013")


@dataclass(frozen=True)
class CostParams:
    """Rates and the context size L they apply to.

    ``write_per_mtok`` prices the one-time conversion of context into memory
    records per million context tokens; ``read_per_turn`` is the flat per-turn
    retrieval-and-answer charge of the memory deployment.
    """

    context_tokens: int
    lc_input_per_mtok: Money = DEFAULT_LC_INPUT_PER_MTOK
    lc_cached_per_mtok: Money = DEFAULT_LC_CACHED_PER_MTOK
    lc_output_per_turn: Money = DEFAULT_LC_OUTPUT_PER_TURN
    write_per_mtok: Money = DEFAULT_WRITE_PER_MTOK
    read_per_turn: Money = DEFAULT_READ_PER_TURN

    def __post_init__(self) -> None:
        if self.context_tokens < 0:
            raise InvalidInputError("context_tokens must be non-negative")
        for field_name in ("lc_input_per_mtok", "lc_cached_per_mtok", "lc_output_per_turn", "write_per_mtok", "read_per_turn"):
            if getattr(self, field_name).micro_usd < 0:
                raise InvalidInputError(f"{field_name} must be non-negative")

    def with_context(self, context_tokens: int) -> "CostParams":
        return replace(self, context_tokens=context_tokens)


def default_cost_params(context_tokens: int) -> CostParams:
    return CostParams(context_tokens=context_tokens)


# ---------------------------------------------------------------------------
# Cost curves
# ---------------------------------------------------------------------------


def _per_context(rate_per_mtok: Money, context_tokens: int) -> Money:
    return rate_per_mtok.scale_div(context_tokens, TOKENS_PER_UNIT)


def lc_first_turn(params: CostParams) -> Money:
    """Cost of turn 1: the whole context at the uncached input rate, plus output."""
    return _per_context(params.lc_input_per_mtok, params.context_tokens) + params.lc_output_per_turn


def lc_cached_turn(params: CostParams) -> Money:
    """Cost of each later turn: the context re-read at the cached rate, plus output."""
    return _per_context(params.lc_cached_per_mtok, params.context_tokens) + params.lc_output_per_turn


def lc_cost(params: CostParams, n: int) -> Money:
    """Cumulative long-context cost over n >= 1 turns."""
    if n < 1:
        raise InvalidInputError("long-context cost needs at least one turn")
    return lc_first_turn(params) + (n - 1) * lc_cached_turn(params)


def write_cost(params: CostParams) -> Money:
    """One-time cost of converting L context tokens into memory records."""
    return _per_context(params.write_per_mtok, params.context_tokens)


def mem_cost(params: CostParams, n: int) -> Money:
    """Cumulative memory-deployment cost over n >= 0 turns."""
    if n < 0:
        raise InvalidInputError("turn count must be non-negative")
    return write_cost(params) + n * params.read_per_turn


@dataclass(frozen=True)
class CostPoint:
    n: int
    memory: Money
    long_context: Money


@dataclass(frozen=True)
class CostCurve:
    context_tokens: int
    points: tuple[CostPoint, ...]


def cost_curve(params: CostParams, turns: list[int]) -> CostCurve:
    """Evaluate both cumulative curves at the given turn counts."""
    if not turns:
        raise InvalidInputError("turns must be non-empty")
    points = tuple(CostPoint(n, mem_cost(params, n), lc_cost(params, n)) for n in sorted(set(turns)))
    return CostCurve(context_tokens=params.context_tokens, points=points)


# ---------------------------------------------------------------------------
# Break-even
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BreakEvenResult:
    """Smallest turn count where memory is strictly cheaper; None when it never is."""

    n_be: int | None
    n_max: int


def break_even(params: CostParams, n_max: int = 10_000) -> BreakEvenResult:
    """Scan n = 1..n_max for the first turn where mem_cost(n) < lc_cost(n)."""
    if n_max < 1:
        raise InvalidInputError("n_max must be at least 1")
    mem = write_cost(params) + params.read_per_turn
    lc = lc_first_turn(params)
    cached = lc_cached_turn(params)
    for n in range(1, n_max + 1):
        if mem < lc:
            return BreakEvenResult(n_be=n, n_max=n_max)
        mem += params.read_per_turn
        lc += cached
    return BreakEvenResult(n_be=None, n_max=n_max)


def break_even_closed_form(params: CostParams, n_max: int = 10_000) -> BreakEvenResult:
    """Affine solution of mem_cost(n) < lc_cost(n); must agree with break_even.

    Writing A = mem_cost(1) - lc_cost(1) and D = cached_turn - read_per_turn,
    memory wins from n = floor(A / D) + 2 when it starts behind (A >= 0) and
    the gap closes (D > 0); from n = 1 when it already starts ahead.
    """
    if n_max < 1:
        raise InvalidInputError("n_max must be at least 1")
    start_gap = (mem_cost(params, 1) - lc_cost(params, 1)).micro_usd
    drift = (lc_cached_turn(params) - params.read_per_turn).micro_usd
    if start_gap < 0:
        n = 1
    elif drift <= 0:
        return BreakEvenResult(n_be=None, n_max=n_max)
    else:
        n = start_gap // drift + 2
    return BreakEvenResult(n_be=n if n <= n_max else None, n_max=n_max)


# ---------------------------------------------------------------------------
# Sensitivity table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SensitivityRow:
    context_tokens: int
    write_cost: Money
    lc_turn1: Money
    lc_turn_n: Money
    n_be: int | None


def sensitivity_table(context_sizes: list[int], base: CostParams | None = None, n_max: int = 10_000) -> list[SensitivityRow]:
    """Per-context-size write cost, per-turn LC costs, and break-even turn."""
    if not context_sizes:
        raise InvalidInputError("context_sizes must be non-empty")
    base = base or default_cost_params(0)
    rows = []
    for length in context_sizes:
        p = base.with_context(length)
        rows.append(
            SensitivityRow(
                context_tokens=length,
                write_cost=write_cost(p),
                lc_turn1=lc_first_turn(p),
                lc_turn_n=lc_cached_turn(p),
                n_be=break_even(p, n_max).n_be,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Heatmap grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridRange:
    """Inclusive integer range sampled at ``steps`` evenly spaced points."""

    lo: int
    hi: int
    steps: int

    def __post_init__(self) -> None:
        if self.steps < 2:
            raise InvalidInputError("steps must be at least 2")
        if self.lo > self.hi:
            raise InvalidInputError("range lo must not exceed hi")

    def values(self) -> list[int]:
        span = self.hi - self.lo
        return [self.lo + round(i * span / (self.steps - 1)) for i in range(self.steps)]


@dataclass(frozen=True)
class HeatmapGrid:
    """diff[i][j] = lc_cost(L_i, N_j) - mem_cost(L_i, N_j); positive means memory is cheaper.

    ``boundary`` pairs each L_i with the smallest turn count (up to the grid's
    N maximum) where the difference turns positive, or None if it never does.
    """

    l_values: tuple[int, ...]
    n_values: tuple[int, ...]
    diff: tuple[tuple[Money, ...], ...]
    boundary: tuple[tuple[int, int | None], ...]


def heatmap_grid(l_range: GridRange, n_range: GridRange, base: CostParams | None = None) -> HeatmapGrid:
    if n_range.lo < 1:
        raise InvalidInputError("turn counts must be at least 1")
    base = base or default_cost_params(0)
    l_values = l_range.values()
    n_values = n_range.values()
    diff_rows = []
    boundary = []
    for length in l_values:
        p = base.with_context(length)
        diff_rows.append(tuple(lc_cost(p, n) - mem_cost(p, n) for n in n_values))
        boundary.append((length, break_even(p, n_max=n_range.hi).n_be))
    return HeatmapGrid(
        l_values=tuple(l_values),
        n_values=tuple(n_values),
        diff=tuple(diff_rows),
        boundary=tuple(boundary),
    )


# ---------------------------------------------------------------------------
# Delimited output
# ---------------------------------------------------------------------------


def write_cost_curve_csv(curve: CostCurve, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "memory_usd", "long_context_usd"])
        for point in curve.points:
            writer.writerow([point.n, point.memory.format(4), point.long_context.format(4)])


def write_sensitivity_csv(rows: list[SensitivityRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["L", "write_cost_usd", "lc_turn1_usd", "lc_turn_n_usd", "n_be"])
        for row in rows:
            writer.writerow(
                [
                    row.context_tokens,
                    row.write_cost.format(4),
                    row.lc_turn1.format(4),
                    row.lc_turn_n.format(4),
                    "" if row.n_be is None else row.n_be,
                ]
            )


def write_heatmap_csv(grid: HeatmapGrid, path: str | Path) -> None:
    """Row-major cells (L outer, N inner) with the difference at 6 decimals."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["L", "N", "diff_usd"])
        for length, row in zip(grid.l_values, grid.diff):
            for n, diff in zip(grid.n_values, row):
                writer.writerow([length, n, diff.format(6)])


def write_boundary_csv(grid: HeatmapGrid, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["L", "n_be"])
        for length, n_be in grid.boundary:
            writer.writerow([length, "" if n_be is None else n_be])


def write_heatmap_pgm(grid: HeatmapGrid, path: str | Path) -> None:
    """Sign-mapped greyscale: dark where LC wins, light where memory wins."""
    width = len(grid.n_values)
    height = len(grid.l_values)
    pixels = bytearray()
    for row in grid.diff:
        for diff in row:
            if diff.micro_usd < 0:
                pixels.append(64)
            elif diff.micro_usd > 0:
                pixels.append(192)
            else:
                pixels.append(128)
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + bytes(pixels))
