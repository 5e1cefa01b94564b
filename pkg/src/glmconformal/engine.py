"""Full-conformal machinery shared by every region type."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# guards floor/ceil of products such as (n + 1) * alpha against rounding
_INT_TOL = 1e-9


def floor_tol(v: float) -> int:
    return int(math.floor(v + _INT_TOL))


def ceil_tol(v: float) -> int:
    return int(math.ceil(v - _INT_TOL))


@dataclass(frozen=True)
class ConformalConfig:
    alpha: float = 0.1
    precision: float = 0.005
    search_lo: float | None = None
    search_hi: float | None = None
    refit_tol: float = 1e-8
    refit_max_iter: int = 25

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.precision > 0:
            raise ValueError(f"precision must be positive, got {self.precision}")
        if (self.search_lo is None) != (self.search_hi is None):
            raise ValueError("give both search bounds or neither")
        if self.search_lo is not None and not self.search_lo < self.search_hi:
            raise ValueError("search_lo must be below search_hi")

    def window(self, responses, positive_support: bool = False) -> tuple[float, float]:
        """Search bounds, explicit or the response range widened 50% per side."""
        if self.search_lo is not None:
            return float(self.search_lo), float(self.search_hi)
        y = np.asarray(responses, dtype=float)
        lo, hi = float(np.min(y)), float(np.max(y))
        span = hi - lo if hi > lo else max(abs(hi), 1.0)
        lo, hi = lo - 0.5 * span, hi + 0.5 * span
        if positive_support:
            lo = max(lo, 1e-9)
        return lo, hi


@dataclass(frozen=True)
class IntervalUnion:
    """Ordered, disjoint closed intervals forming a prediction region."""

    pieces: tuple[tuple[float, float], ...] = ()
    n_warnings: int = field(default=0, compare=False)

    def __post_init__(self):
        pieces = tuple((float(a), float(b)) for a, b in self.pieces)
        for a, b in pieces:
            if not a < b:
                raise ValueError(f"degenerate piece ({a}, {b})")
        for (_, b0), (a1, _) in zip(pieces, pieces[1:]):
            if not b0 < a1:
                raise ValueError("pieces must be sorted and disjoint")
        object.__setattr__(self, "pieces", pieces)

    @property
    def empty(self) -> bool:
        return not self.pieces

    @property
    def length(self) -> float:
        return sum(b - a for a, b in self.pieces)

    @property
    def lower(self) -> float:
        return self.pieces[0][0]

    @property
    def upper(self) -> float:
        return self.pieces[-1][1]

    def __contains__(self, y) -> bool:
        return any(a <= y <= b for a, b in self.pieces)

    def __len__(self) -> int:
        return len(self.pieces)

    def __iter__(self):
        return iter(self.pieces)

    def distance(self, y: float) -> float:
        """Distance from ``y`` to the nearest boundary, 0 inside the region."""
        if y in self:
            return 0.0
        return min(min(abs(y - a), abs(y - b)) for a, b in self.pieces)


def adjusted_level(n_local: int, alpha: float) -> float:
    """``floor((n_local + 1) alpha) / (n_local + 1)``."""
    if n_local < 1:
        raise ValueError("n_local must be at least 1")
    return floor_tol((n_local + 1) * alpha) / (n_local + 1)


def conformity_rank(other_scores, candidate_score: float) -> float:
    """Fraction of the ``n + 1`` scores (candidate included) not above the candidate's."""
    s = np.asarray(other_scores, dtype=float)
    if s.size == 0:
        raise ValueError("need at least one other score")
    if not (np.all(np.isfinite(s)) and math.isfinite(candidate_score)):
        raise ValueError("conformity scores must be finite")
    return (1 + int(np.sum(s <= candidate_score))) / (s.size + 1)


def search_grid(lo: float, hi: float, precision: float) -> np.ndarray:
    k = floor_tol((hi - lo) / precision)
    grid = lo + precision * np.arange(k + 1)
    if grid[-1] < hi - 1e-12 * max(1.0, abs(hi)):
        grid = np.append(grid, hi)
    else:
        grid[-1] = hi
    return grid


def _evaluate(accept, ys, vectorized):
    if vectorized:
        return np.asarray(accept(ys), dtype=bool), 0
    out = np.zeros(len(ys), dtype=bool)
    errors = 0
    for i, y in enumerate(ys):
        try:
            out[i] = bool(accept(float(y)))
        except Exception:
            errors += 1
    return out, errors


def region_from_acceptance(accept, config: ConformalConfig, lo: float | None = None,
                           hi: float | None = None, vectorized: bool = False,
                           refine: bool = True) -> IntervalUnion:
    """Turn a membership test over candidate responses into an interval union.

    ``accept`` is evaluated on the grid ``lo, lo + precision, ..., hi``; runs
    of accepted grid points become pieces whose interior ends are refined by
    bisection to half the grid spacing.  With ``vectorized=True`` the test is
    called once per batch with an array of candidates and must return a
    boolean array; otherwise it is called per candidate, and a candidate
    whose test raises is rejected and counted in ``n_warnings``.
    """
    if lo is None:
        lo, hi = config.search_lo, config.search_hi
    if lo is None or hi is None:
        raise ValueError("search bounds are required")
    grid = search_grid(lo, hi, config.precision)
    acc, warnings = _evaluate(accept, grid, vectorized)
    if not acc.any():
        return IntervalUnion((), warnings)

    edges = np.diff(np.concatenate(([0], acc.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1

    # brackets (accepted end, rejected end) for every interior boundary
    inner, outer, slots = [], [], []
    lowers = grid[starts].astype(float)
    uppers = grid[stops].astype(float)
    if refine:
        for j, (s, e) in enumerate(zip(starts, stops)):
            if s > 0:
                inner.append(grid[s]); outer.append(grid[s - 1]); slots.append((0, j))
            if e < len(grid) - 1:
                inner.append(grid[e]); outer.append(grid[e + 1]); slots.append((1, j))
    if inner:
        inner = np.array(inner)
        outer = np.array(outer)
        tol = config.precision / 2
        while np.max(np.abs(inner - outer)) > tol * (1 + 1e-9):
            mid = 0.5 * (inner + outer)
            ok, extra = _evaluate(accept, mid, vectorized)
            warnings += extra
            inner = np.where(ok, mid, inner)
            outer = np.where(ok, outer, mid)
        ends = 0.5 * (inner + outer)
        for (side, j), v in zip(slots, ends):
            if side == 0:
                lowers[j] = v
            else:
                uppers[j] = v
    pieces = [(a, b) for a, b in zip(lowers, uppers) if a < b]
    dropped = len(lowers) - len(pieces)
    return IntervalUnion(tuple(pieces), warnings + dropped)


def region_from_grid(grid, accepted) -> IntervalUnion:
    """Pieces spanning the first to last grid point of each accepted run.

    No refinement between grid points; isolated accepted points cannot form
    a nondegenerate piece and are dropped with a warning.
    """
    grid = np.asarray(grid, dtype=float)
    acc = np.asarray(accepted, dtype=bool)
    edges = np.diff(np.concatenate(([0], acc.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    pieces = [(grid[s], grid[e]) for s, e in zip(starts, stops) if e > s]
    return IntervalUnion(tuple(pieces), int(np.sum(stops == starts)))


def with_warnings(region: IntervalUnion, extra: int) -> IntervalUnion:
    return replace(region, n_warnings=region.n_warnings + int(extra)) if extra else region
