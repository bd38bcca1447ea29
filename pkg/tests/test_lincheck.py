import random
from collections import defaultdict

import pytest
from hypothesis import given, settings, strategies as st

from cloak.core import OpType
from cloak.lincheck import (
    IncompleteHistoryError,
    brute_force_linearizable,
    check_linearizability,
)
from cloak.workload import ClientOp

from histories import random_history, v


def op(i, kind, value, start, end, result=None, address=0):
    return ClientOp(i, kind, address, value, 0, start, end, result)


def test_sequential_write_read():
    h = [op(1, OpType.WRITE, v(1), 0, 1), op(2, OpType.READ, None, 2, 3, v(1))]
    assert check_linearizability(h, v(0))
    h[1].result = v(0)
    assert not check_linearizability(h, v(0))


def test_last_write_wins_sequentially():
    h = [op(1, OpType.WRITE, v(1), 0, 1), op(2, OpType.WRITE, v(2), 2, 3),
         op(3, OpType.READ, None, 4, 5, v(2))]
    assert check_linearizability(h, v(0))
    h[2].result = v(1)
    verdict = check_linearizability(h, v(0))
    assert not verdict and verdict.address == 0 and verdict.ops


def test_concurrent_read_may_see_either():
    w = op(1, OpType.WRITE, v(1), 0, 4)
    for result in (v(0), v(1)):
        assert check_linearizability([w, op(2, OpType.READ, None, 1, 2, result)], v(0))


def test_read_of_unwritten_value_fails():
    assert not check_linearizability([op(1, OpType.READ, None, 0, 1, v(9))], v(0))


def test_incomplete_history_rejected():
    with pytest.raises(IncompleteHistoryError):
        check_linearizability([op(1, OpType.READ, None, 0, None)])


def test_addresses_checked_independently():
    h = [op(1, OpType.WRITE, v(1), 0, 1, address=0),
         op(2, OpType.READ, None, 2, 3, v(0), address=1)]
    assert check_linearizability(h, v(0))


def test_default_initial_is_zero_block():
    h = [op(1, OpType.READ, None, 0, 1, v(0))]
    assert check_linearizability(h)


def per_address_truth(ops, initial):
    groups = defaultdict(list)
    for o in ops:
        groups[o.address].append(o)
    return all(brute_force_linearizable(g, initial) for g in groups.values())


def test_agrees_with_brute_force_on_1000_histories():
    rng = random.Random(2024)
    outcomes = set()
    for k in range(1000):
        ops = random_history(rng, rng.randint(1, 8), unique=k % 3 != 0, addresses=rng.randint(1, 2))
        truth = per_address_truth(ops, v(0))
        assert bool(check_linearizability(ops, v(0))) == truth
        outcomes.add(truth)
    assert outcomes == {True, False}


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9), st.integers(1, 7), st.booleans())
def test_agrees_with_brute_force_property(seed, n, unique):
    ops = random_history(random.Random(seed), n, unique)
    assert bool(check_linearizability(ops, v(0))) == brute_force_linearizable(ops, v(0))
