"""Budget schedules and temporal-locality analysis of access traces."""

from __future__ import annotations

import bisect
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from cloak.core import BudgetSchedule

BINS_PER_DECADE = 10


class _Harmonic:
    """Budgets ``ceil(fb / i)`` and their running totals, extended on demand."""

    __slots__ = ("fb", "budgets", "totals", "cache")

    def __init__(self, fb: int):
        self.fb = fb
        self.budgets: list[int] = []
        self.totals: list[int] = []
        self.cache: dict[int, BudgetSchedule] = {}

    def schedule(self, n: int) -> BudgetSchedule:
        budgets, totals = self.budgets, self.totals
        total = totals[-1] if totals else 0
        i = len(budgets) + 1
        while total < n:
            budget = -(-self.fb // i)
            budgets.append(budget)
            total += budget * i
            totals.append(total)
            i += 1
        # the loop stops at the first total >= n
        k = bisect.bisect_left(totals, n) + 1
        hit = self.cache.get(k)
        if hit is None:
            hit = self.cache[k] = BudgetSchedule(tuple(budgets[:k]))
        return hit


_HARMONIC: dict[int, _Harmonic] = {}


def set_budgets(n: int, first_budget: int) -> BudgetSchedule:
    """Harmonic budget schedule covering at least ``n`` elements.

    Budget ``i`` is ``ceil(first_budget / i)``; budgets are appended until
    ``sum(budget_i * i) >= n``.  Prefixes are shared across calls with the
    same ``first_budget``; schedules are immutable, so sharing is safe.
    """
    if n < 1 or first_budget < 1:
        raise ValueError("n and first_budget must be >= 1")
    h = _HARMONIC.get(first_budget)
    if h is None:
        h = _HARMONIC[first_budget] = _Harmonic(first_budget)
    return h.schedule(n)


def find_first_budget(n: int, target_batch_size: int) -> int:
    """Smallest ``first_budget`` whose schedule batch size is closest to the target."""
    if target_batch_size < 1:
        raise ValueError("target batch size must be >= 1")
    best, best_gap = 1, math.inf
    for fb in range(1, target_batch_size + 1):
        gap = abs(set_budgets(n, fb).batch_size - target_batch_size)
        if gap < best_gap:
            best, best_gap = fb, gap
        if gap == 0:
            break
    return best


@dataclass
class TemporalHistogram:
    """``counts[x]``: same-item access pairs with exactly ``x`` accesses between them."""

    counts: dict[int, int]
    distinct: Optional[int] = None
    length: Optional[int] = None

    def total(self) -> int:
        return sum(self.counts.values())

    def nonzero(self) -> int:
        return sum(1 for c in self.counts.values() if c > 0)

    def to_array(self) -> np.ndarray:
        if not self.counts:
            return np.zeros(0, dtype=np.int64)
        arr = np.zeros(max(self.counts) + 1, dtype=np.int64)
        for x, c in self.counts.items():
            arr[x] = c
        return arr


@dataclass
class ZipfFit:
    exponent: float
    scale: float
    residual: float
    bins: int = 0
    max_rank: Optional[int] = field(default=None)


def temporal_histogram(trace: Sequence[int]) -> TemporalHistogram:
    arr = np.asarray(trace)
    if arr.size == 0:
        raise ValueError("trace is empty")
    order = np.argsort(arr, kind="stable")
    ordered = arr[order]
    same = ordered[1:] == ordered[:-1]
    gaps = (order[1:] - order[:-1] - 1)[same]
    binned = np.bincount(gaps) if gaps.size else np.zeros(0, dtype=np.int64)
    counts = {int(x): int(c) for x, c in enumerate(binned) if c}
    distinct = int(arr.size - same.sum())
    return TemporalHistogram(counts, distinct=distinct, length=int(arr.size))


def _log_bins(kmax: int) -> np.ndarray:
    n_edges = int(math.log10(kmax + 1) * BINS_PER_DECADE) + 2
    return np.unique(np.floor(np.logspace(0, math.log10(kmax + 1), n_edges)).astype(np.int64))


def fit_zipf(histogram: TemporalHistogram, max_rank: Optional[int] = None) -> ZipfFit:
    """Fit ``count(k) ~ C * k**-s`` with rank ``k = x + 1``.

    Counts are aggregated into logarithmic rank bins and the mean count per
    rank is regressed on the mean rank in log-log space.  Bins past
    ``max_rank`` (default: the number of distinct items, when the histogram
    knows it) are excluded: beyond it the finite population truncates the
    tail and the curve is no longer scale free.
    """
    counts = histogram.to_array()
    if int(np.count_nonzero(counts)) < 2:
        raise ValueError("need at least two nonzero bins to fit")
    if max_rank is None:
        max_rank = histogram.distinct
    if max_rank is not None:
        counts = counts[: max(int(max_rank), 2)]
    edges = _log_bins(len(counts))
    xs, ys = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mass = counts[lo - 1:hi - 1].sum()
        if mass > 0:
            xs.append(math.log((lo + hi - 1) / 2))
            ys.append(math.log(mass / (hi - lo)))
    if len(xs) < 2:
        raise ValueError("need at least two nonzero bins to fit")
    x = np.asarray(xs)
    y = np.asarray(ys)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sum((y - (intercept + slope * x)) ** 2))
    return ZipfFit(
        exponent=float(-slope),
        scale=float(math.exp(intercept)),
        residual=residual,
        bins=len(xs),
        max_rank=max_rank,
    )


@dataclass
class TracePlan:
    schedule: BudgetSchedule
    fit: Optional[ZipfFit]

    def to_dict(self) -> dict:
        out = self.schedule.to_dict()
        out["fitted_exponent"] = self.fit.exponent if self.fit else None
        out["residual"] = self.fit.residual if self.fit else None
        return out


def schedule_for_trace(trace: Sequence[int], first_budget: int) -> TracePlan:
    """Size a schedule for the trace's item count and report its Zipf fit.

    The fit is informational only; the schedule always uses the harmonic
    decay of :func:`set_budgets`.
    """
    if len(trace) == 0:
        raise ValueError("trace is empty")
    hist = temporal_histogram(trace)
    distinct = len(Counter(trace)) if hist.distinct is None else hist.distinct
    try:
        fit = fit_zipf(hist)
    except ValueError:
        fit = None
    return TracePlan(set_budgets(distinct, first_budget), fit)
