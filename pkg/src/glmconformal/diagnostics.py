"""Coverage, area and prediction-error diagnostics for prediction regions."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .parametric import BinPartition


@dataclass
class DiagnosticsReport:
    method: str
    marginal_coverage: float
    local_coverage: dict
    conditional_coverage: dict
    mean_area: float
    prediction_error: float
    n_points: int
    local_counts: dict = field(default_factory=dict)
    conditional_counts: dict = field(default_factory=dict)
    warnings: Counter = field(default_factory=Counter)

    def __post_init__(self):
        covs = [self.marginal_coverage, *self.local_coverage.values(), *self.conditional_coverage.values()]
        if any(not 0.0 <= c <= 1.0 for c in covs if not np.isnan(c)):
            raise ValueError("coverage outside [0, 1]")
        if self.prediction_error < 0:
            raise ValueError("prediction error must be nonnegative")


def _check_lengths(regions, *arrays):
    for a in arrays:
        if len(a) != len(regions):
            raise ValueError(f"got {len(regions)} regions but {len(a)} aligned values")


def prediction_error(regions, responses) -> float:
    """Mean squared distance from uncovered responses to the nearest boundary.

    Empty regions are left out of both the sum and the count.
    """
    _check_lengths(regions, responses)
    dists = [r.distance(float(y)) for r, y in zip(regions, responses) if not r.empty]
    if not dists:
        return float("nan")
    return float(np.mean(np.square(dists)))


def mean_area(regions) -> float:
    if len(regions) == 0:
        raise ValueError("no regions")
    return float(np.mean([r.length for r in regions]))


def covered(regions, responses) -> np.ndarray:
    _check_lengths(regions, responses)
    return np.array([float(y) in r for r, y in zip(regions, responses)], dtype=bool)


def fine_slices(xs, n_slices: int, lo=None, hi=None) -> np.ndarray:
    """Slice index (n x d) of each main effect on an equal-width grid."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    lo = np.zeros(xs.shape[1]) if lo is None else np.asarray(lo, dtype=float)
    hi = np.ones(xs.shape[1]) if hi is None else np.asarray(hi, dtype=float)
    idx = np.floor((xs - lo) / (hi - lo) * n_slices).astype(int)
    return np.clip(idx, 0, n_slices - 1)


def _group_rates(groups, hits):
    rates, counts = {}, {}
    totals, n_hit = Counter(groups), Counter(g for g, h in zip(groups, hits) if h)
    for g in sorted(totals):
        counts[g] = totals[g]
        rates[g] = n_hit[g] / totals[g]
    return rates, counts


def _coverage_maps(regions, responses, xs, partition, fine_slices_n):
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    _check_lengths(regions, responses, xs)
    hits = covered(regions, responses)
    local, local_counts = {}, {}
    if partition is not None:
        local, local_counts = _group_rates([int(b) for b in partition.assign(xs)], hits)
    lo = partition.lo if partition is not None else None
    hi = partition.hi if partition is not None else None
    sl = fine_slices(xs, fine_slices_n, lo, hi)
    keys = [(a, int(s)) for row in sl for a, s in enumerate(row)]
    conditional, conditional_counts = _group_rates(keys, np.repeat(hits, xs.shape[1]))
    return hits, local, local_counts, conditional, conditional_counts


def coverage(regions, responses, xs, partition: BinPartition | None = None, fine_slices_n: int = 10):
    """Marginal, per-bin and per-fine-slice coverage with closed-interval membership.

    Fine-slice keys are ``(axis, slice)`` pairs, one slicing per main effect.
    """
    hits, local, _, conditional, _ = _coverage_maps(regions, responses, xs, partition, fine_slices_n)
    return float(hits.mean()), local, conditional


def evaluate(method: str, regions, responses, xs, partition: BinPartition | None = None,
             fine_slices_n: int = 10) -> DiagnosticsReport:
    hits, local, local_counts, conditional, conditional_counts = _coverage_maps(
        regions, responses, xs, partition, fine_slices_n)
    warnings = Counter()
    n_empty = sum(r.empty for r in regions)
    if n_empty:
        warnings["empty_regions"] = n_empty
    search = sum(r.n_warnings for r in regions)
    if search:
        warnings["rejected_candidates"] = search
    return DiagnosticsReport(
        method=method,
        marginal_coverage=float(hits.mean()),
        local_coverage=local,
        conditional_coverage=conditional,
        mean_area=mean_area(regions),
        prediction_error=prediction_error(regions, responses),
        n_points=len(regions),
        local_counts=local_counts,
        conditional_counts=conditional_counts,
        warnings=warnings,
    )


def average_reports(reports) -> DiagnosticsReport:
    """Replication average: every metric is the plain mean across reports."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")

    def mean_map(attr):
        keys = sorted({k for r in reports for k in getattr(r, attr)})
        return {k: float(np.mean([getattr(r, attr)[k] for r in reports if k in getattr(r, attr)]))
                for k in keys}

    def sum_map(attr):
        out = Counter()
        for r in reports:
            out.update(getattr(r, attr))
        return dict(out)

    warnings = Counter()
    for r in reports:
        warnings.update(r.warnings)
    return DiagnosticsReport(
        method=reports[0].method,
        marginal_coverage=float(np.mean([r.marginal_coverage for r in reports])),
        local_coverage=mean_map("local_coverage"),
        conditional_coverage=mean_map("conditional_coverage"),
        mean_area=float(np.mean([r.mean_area for r in reports])),
        prediction_error=float(np.nanmean([r.prediction_error for r in reports])),
        n_points=sum(r.n_points for r in reports),
        local_counts=sum_map("local_counts"),
        conditional_counts=sum_map("conditional_counts"),
        warnings=warnings,
    )


def pool_reports(reports) -> DiagnosticsReport:
    """Point-weighted pooling: coverages as if all test points formed one sample."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to pool")
    total = sum(r.n_points for r in reports)

    def pooled(rate_attr, count_attr):
        covered_n, counts = Counter(), Counter()
        for r in reports:
            for k, c in getattr(r, count_attr).items():
                counts[k] += c
                covered_n[k] += getattr(r, rate_attr)[k] * c
        return {k: covered_n[k] / counts[k] for k in sorted(counts)}, dict(counts)

    local, local_counts = pooled("local_coverage", "local_counts")
    cond, cond_counts = pooled("conditional_coverage", "conditional_counts")
    warnings = Counter()
    for r in reports:
        warnings.update(r.warnings)
    weights = np.array([r.n_points for r in reports], dtype=float)
    return DiagnosticsReport(
        method=reports[0].method,
        marginal_coverage=float(np.dot(weights, [r.marginal_coverage for r in reports]) / total),
        local_coverage=local,
        conditional_coverage=cond,
        mean_area=float(np.dot(weights, [r.mean_area for r in reports]) / total),
        prediction_error=float(np.nanmean([r.prediction_error for r in reports])),
        n_points=total,
        local_counts=local_counts,
        conditional_counts=cond_counts,
        warnings=warnings,
    )
