"""Domain types and size arithmetic shared by the proxy, planner and auditor.

Addresses are plain ``int`` values.  Batch ids are absolute and increase by
one per batch; an address's reuse distance is ``cur_batch_id -
last_batch_id`` where ``cur_batch_id`` is the id of the batch about to be
formed.  Elements of the batch that was just written back therefore sit at
distance 0 relative to that batch's id and at distance 1 when the next batch
is built, which is the set that ``a_1`` draws from.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence, Union

LogicalAddress = int
PhysicalAddress = int


class OpType(enum.Enum):
    READ = "R"
    WRITE = "W"


@dataclass(slots=True)
class Query:
    id: int
    type: OpType
    address: LogicalAddress
    value: Optional[bytes] = None
    arrival_time: float = 0.0

    def validate(self, element_size: int) -> None:
        if self.type is OpType.WRITE:
            if self.value is None or len(self.value) != element_size:
                raise ValueError(
                    f"WRITE to {self.address} needs exactly {element_size} bytes"
                )
        elif self.value is not None:
            raise ValueError("READ queries carry no value")


@dataclass(frozen=True)
class BudgetSchedule:
    """Fixed per-reuse-distance budgets ``[a_1, ..., a_T]``."""

    budgets: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "budgets", tuple(int(b) for b in self.budgets))
        if not self.budgets:
            raise ValueError("budget list is empty")
        if any(b < 1 for b in self.budgets):
            raise ValueError("every budget must be >= 1")

    @property
    def depth(self) -> int:
        """Number of reuse-distance sets, T."""
        return len(self.budgets)

    @property
    def batch_size(self) -> int:
        return sum(self.budgets)

    @property
    def capacity(self) -> int:
        return total_capacity(self.budgets)

    def budget(self, t: int) -> int:
        """Budget of set ``t`` (1-based); ``a_0`` is 0."""
        if t == 0:
            return 0
        if not 1 <= t <= self.depth:
            raise IndexError(f"reuse distance {t} outside 1..{self.depth}")
        return self.budgets[t - 1]

    def set_sizes(self) -> list[int]:
        return [set_size_at(self, t) for t in range(1, self.depth + 1)]

    def is_non_increasing(self) -> bool:
        return all(a >= b for a, b in zip(self.budgets, self.budgets[1:]))

    def to_dict(self) -> dict:
        return {
            "budgets": list(self.budgets),
            "batch_size": self.batch_size,
            "capacity": self.capacity,
        }


def _budget_list(budgets: Union[BudgetSchedule, Sequence[int]]) -> Sequence[int]:
    return budgets.budgets if isinstance(budgets, BudgetSchedule) else budgets


def set_size_at(budgets: Union[BudgetSchedule, Sequence[int]], t: int) -> int:
    """Steady-state size of set ``s_t`` just before a batch is formed."""
    b = _budget_list(budgets)
    if not 1 <= t <= len(b):
        raise IndexError(f"reuse distance {t} outside 1..{len(b)}")
    return sum(b[t - 1:])


def total_capacity(budgets: Union[BudgetSchedule, Sequence[int]]) -> int:
    """Number of elements the schedule partitions: ``sum_t a_t * t``."""
    b = _budget_list(budgets)
    if len(b) == 0:
        raise ValueError("budget list is empty")
    # equals the sum of the steady-state set sizes, sum_t sum_{i>=t} a_i
    return sum(a * t for t, a in enumerate(b, start=1))


def sqrt_bound_holds(schedule: BudgetSchedule) -> bool:
    # ceil(sqrt(c)) == isqrt(c - 1) + 1 for c >= 1
    return schedule.batch_size >= math.isqrt(schedule.capacity - 1) + 1


class PositionMapEntry(NamedTuple):
    logical: LogicalAddress
    physical: PhysicalAddress
    last_batch_id: int
    last_client_access: Optional[float]


def reuse_distance(
    entry: Union[PositionMapEntry, int], cur_batch_id: int, max_distance: Optional[int] = None
) -> int:
    """``cur_batch_id - last_batch_id``, clamped to ``max_distance`` when given."""
    last = entry.last_batch_id if isinstance(entry, PositionMapEntry) else entry
    if last > cur_batch_id:
        raise ValueError(f"last batch id {last} is ahead of current id {cur_batch_id}")
    d = cur_batch_id - last
    if max_distance is not None and d > max_distance:
        return max_distance
    return d


class PositionMap:
    """Bijection between logical and physical addresses plus per-element metadata."""

    def __init__(self, physical_of: Sequence[int], last_batch_id: Sequence[int]):
        n = len(physical_of)
        if len(last_batch_id) != n:
            raise ValueError("metadata length mismatch")
        self.to_physical: list[int] = list(physical_of)
        self.to_logical: list[int] = [-1] * n
        for logical, phys in enumerate(self.to_physical):
            if not 0 <= phys < n or self.to_logical[phys] != -1:
                raise ValueError("physical assignment is not a permutation")
            self.to_logical[phys] = logical
        self.last_batch_id: list[int] = list(last_batch_id)
        self.last_client_access: list[Optional[float]] = [None] * n

    def __len__(self) -> int:
        return len(self.to_physical)

    def entry(self, logical: LogicalAddress) -> PositionMapEntry:
        return PositionMapEntry(
            logical,
            self.to_physical[logical],
            self.last_batch_id[logical],
            self.last_client_access[logical],
        )

    def map_to_physical(self, logical: Iterable[LogicalAddress]) -> list[PhysicalAddress]:
        return [self.to_physical[a] for a in logical]

    def assign(self, logical: LogicalAddress, physical: PhysicalAddress) -> None:
        self.to_physical[logical] = physical
        self.to_logical[physical] = logical

    def is_bijective(self) -> bool:
        n = len(self)
        if sorted(self.to_physical) != list(range(n)):
            return False
        return all(self.to_logical[self.to_physical[a]] == a for a in range(n))


@dataclass
class ReuseDistanceState:
    """Partition of all addresses into reuse-distance sets with pending queues.

    Groups and queues are keyed by the absolute id of the batch that last
    touched their addresses, so advancing the batch id shifts every set by
    one distance without moving any data.  Distances beyond ``depth`` are
    folded into the last set.
    """

    depth: int
    cur_batch_id: int
    groups: dict[int, set[int]] = field(default_factory=dict)
    queues: dict[int, deque] = field(default_factory=dict)

    def key_distance(self, key: int) -> int:
        return reuse_distance(key, self.cur_batch_id, self.depth)

    def keys_at(self, t: int) -> list[int]:
        """Group keys whose addresses are at (clamped) distance ``t``."""
        if t < self.depth:
            key = self.cur_batch_id - t
            return [key] if key in self.groups or key in self.queues else []
        edge = self.cur_batch_id - self.depth
        return sorted(k for k in set(self.groups) | set(self.queues) if k <= edge)

    def members(self, t: int) -> list[int]:
        out: list[int] = []
        for k in self.keys_at(t):
            out.extend(self.groups.get(k, ()))
        return out

    def set_size(self, t: int) -> int:
        return sum(len(self.groups.get(k, ())) for k in self.keys_at(t))

    def sets_by_distance(self) -> dict[int, set[int]]:
        out: dict[int, set[int]] = {}
        for key, members in self.groups.items():
            if members:
                out.setdefault(self.key_distance(key), set()).update(members)
        return out

    def set_sizes(self) -> list[int]:
        return [self.set_size(t) for t in range(1, self.depth + 1)]

    def enqueue(self, address: int, key: int) -> None:
        self.queues.setdefault(key, deque()).append(address)

    def queued(self, t: int) -> int:
        return sum(len(self.queues.get(k, ())) for k in self.keys_at(t))

    def pop_queued(self, t: int, limit: int) -> list[int]:
        out: list[int] = []
        for k in self.keys_at(t):
            q = self.queues.get(k)
            while q and len(out) < limit:
                out.append(q.popleft())
            if len(out) >= limit:
                break
        return out

    def remove(self, address: int, key: int) -> None:
        self.groups[key].remove(address)

    def add_batch(self, addresses: Iterable[int]) -> None:
        """Record a completed batch as the newest set and advance the batch id."""
        self.groups[self.cur_batch_id] = set(addresses)
        self.cur_batch_id += 1
        for k in [k for k, g in self.groups.items() if not g]:
            del self.groups[k]
        for k in [k for k, q in self.queues.items() if not q]:
            del self.queues[k]

    def total_queued(self) -> int:
        return sum(len(q) for q in self.queues.values())

    def is_partition(self, n: int) -> bool:
        seen: set[int] = set()
        total = 0
        for g in self.groups.values():
            total += len(g)
            seen |= g
        return total == n and seen == set(range(n))
