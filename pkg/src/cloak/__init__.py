"""Cloak: an oblivious key-value store behind a trusted batching proxy.

The proxy hides client access patterns by sending the storage server
fixed-size batches on a fixed cadence, drawing a fixed number of
addresses (the budget) from every reuse-distance set.
"""

from cloak.core import (
    BudgetSchedule,
    OpType,
    PositionMap,
    Query,
    ReuseDistanceState,
    reuse_distance,
    set_size_at,
    total_capacity,
)
from cloak.planner import fit_zipf, schedule_for_trace, set_budgets, temporal_histogram

__all__ = [
    "BudgetSchedule",
    "OpType",
    "PositionMap",
    "Query",
    "ReuseDistanceState",
    "fit_zipf",
    "reuse_distance",
    "schedule_for_trace",
    "set_budgets",
    "set_size_at",
    "temporal_histogram",
    "total_capacity",
]

__version__ = "0.1.0"
