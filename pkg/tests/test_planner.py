import math
import random
import time

import pytest
from hypothesis import given, settings, strategies as st

from cloak.planner import (
    TemporalHistogram,
    find_first_budget,
    fit_zipf,
    schedule_for_trace,
    set_budgets,
    temporal_histogram,
)
from cloak.workload import gen_temporal_zipf_trace


def algorithm3_oracle(n, first_budget):
    """Literal loop: budget = ceil(first_budget / i) until total >= n."""
    budgets = []
    total = 0
    i = 1
    while total < n:
        budget = math.ceil(first_budget / i)
        budgets.append(budget)
        total = total + budget * i
        i = i + 1
    return budgets, total


@pytest.mark.parametrize("n,fb,budgets,cap", [
    (10, 4, [4, 2, 2], 14),
    (1, 1, [1], 1),
    (100, 10, [10, 5, 4, 3, 2, 2, 2, 2, 2], 114),
])
def test_set_budgets_examples(n, fb, budgets, cap):
    s = set_budgets(n, fb)
    assert list(s.budgets) == budgets
    assert s.capacity == cap
    assert s.batch_size == sum(budgets)


@given(st.integers(1, 10_000), st.integers(1, 100))
def test_set_budgets_matches_oracle(n, fb):
    budgets, total = algorithm3_oracle(n, fb)
    s = set_budgets(n, fb)
    assert list(s.budgets) == budgets and s.capacity == total


@given(st.integers(1, 5_000), st.integers(1, 60))
def test_monotonicity(n, fb):
    s = set_budgets(n, fb)
    assert s.is_non_increasing()
    assert s.capacity >= n
    assert set_budgets(n + 1, fb).capacity >= s.capacity


def test_capacity_not_monotone_in_first_budget():
    # a larger first budget can end the loop sooner with less overshoot
    assert set_budgets(2, 1).capacity == 3
    assert set_budgets(2, 2).capacity == 2


def test_set_budgets_rejects_bad_input():
    with pytest.raises(ValueError):
        set_budgets(0, 1)
    with pytest.raises(ValueError):
        set_budgets(1, 0)


def test_find_first_budget_closest():
    fb = find_first_budget(10_000, 400)
    best = min(abs(set_budgets(10_000, k).batch_size - 400) for k in range(1, 401))
    assert abs(set_budgets(10_000, fb).batch_size - 400) == best


@pytest.mark.parametrize("trace,expected", [
    ("AA", {0: 1}),
    ("ABA", {1: 1}),
    ("ABBA", {0: 1, 2: 1}),
])
def test_histogram_examples(trace, expected):
    assert temporal_histogram([ord(c) for c in trace]).counts == expected


def naive_histogram(trace):
    last, counts = {}, {}
    for i, a in enumerate(trace):
        if a in last:
            x = i - last[a] - 1
            counts[x] = counts.get(x, 0) + 1
        last[a] = i
    return counts


@settings(max_examples=300)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=200))
def test_histogram_matches_naive_and_conserves(trace):
    h = temporal_histogram(trace)
    assert h.counts == naive_histogram(trace)
    assert h.total() == len(trace) - len(set(trace))


def test_histogram_conservation_random_traces():
    rng = random.Random(7)
    for _ in range(1000):
        trace = [rng.randrange(rng.randint(1, 50)) for _ in range(rng.randint(1, 300))]
        assert temporal_histogram(trace).total() == len(trace) - len(set(trace))


def test_fit_exact_zipf_shape():
    h = TemporalHistogram({x: round(1000 / (x + 1)) for x in range(100)})
    assert fit_zipf(h).exponent == pytest.approx(1.0, abs=0.02)


def test_fit_flat():
    h = TemporalHistogram({x: 500 for x in range(10)})
    assert fit_zipf(h).exponent == pytest.approx(0.0, abs=0.02)


@pytest.mark.parametrize("s", [0.5, 1.0, 1.5, 2.0])
def test_fit_recovers_power_law(s):
    h = TemporalHistogram({x: round(1e9 * (x + 1) ** -s) for x in range(2000)})
    assert fit_zipf(h).exponent == pytest.approx(s, abs=0.02)


def test_fit_needs_two_bins():
    with pytest.raises(ValueError):
        fit_zipf(TemporalHistogram({3: 10}))


def test_fit_generator_round_trip_s12():
    t = time.time()
    trace = gen_temporal_zipf_trace(10_000, 1_000_000, 1.2, seed=5)
    fit = fit_zipf(temporal_histogram(trace))
    assert abs(fit.exponent - 1.2) <= 0.15
    assert time.time() - t < 60


def test_schedule_for_trace():
    plan = schedule_for_trace(list(range(10)) * 3, 4)
    assert list(plan.schedule.budgets) == [4, 2, 2]
    assert list(schedule_for_trace([7], 1).schedule.budgets) == [1]
    d = plan.to_dict()
    assert set(d) == {"budgets", "batch_size", "capacity", "fitted_exponent", "residual"}
    with pytest.raises(ValueError):
        schedule_for_trace([], 1)
