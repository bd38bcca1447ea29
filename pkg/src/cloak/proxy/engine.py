"""Batch-owner state machine of the trusted proxy.

:class:`ProxyEngine` owns the position map, the reuse-distance sets and the
query map.  It does no I/O and keeps no clock: the caller feeds it queries,
decides when the batch timer fires and moves blocks to and from the storage
server.  The asyncio service in :mod:`cloak.proxy.service` and the
simulation harness in :mod:`cloak.bench` are the two drivers.
"""

from __future__ import annotations

import itertools
import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Protocol, Sequence

from cloak.core import BudgetSchedule, OpType, PositionMap, Query, ReuseDistanceState
from cloak.crypto import BlockCipher, CipherBlock, random_permutation


class AddressError(ValueError):
    pass


class Response(NamedTuple):
    query: Query
    value: Optional[bytes]  # None acknowledges a WRITE


class BlockStore(Protocol):
    def batch_read(self, addresses: Sequence[int]) -> list[CipherBlock]: ...

    def batch_write(self, writes: Sequence[tuple[int, CipherBlock]]) -> bool: ...


@dataclass
class ProxyConfig:
    element_size: int = 1024
    batch_interval: float = 0.020
    cache_size: int = 1000
    queue_capacity: Optional[int] = None  # None: twice the batch size
    eviction: str = "lru"
    cache_reads: bool = False
    dummy_policy: str = "recent"
    # False builds the insecure mutant used to show the audit has power
    fill_dummies: bool = True


class Cache:
    """Bounded value cache; ``lru`` or ``fifo`` eviction."""

    def __init__(self, max_entries: int, policy: str = "lru"):
        if policy not in ("lru", "fifo"):
            raise ValueError(f"unknown eviction policy {policy!r}")
        self.max_entries = max_entries
        self.policy = policy
        self.entries: OrderedDict[int, bytes] = OrderedDict()
        self.evictions = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, address: int) -> bool:
        return address in self.entries

    def get(self, address: int) -> Optional[bytes]:
        value = self.entries.get(address)
        if value is not None and self.policy == "lru":
            self.entries.move_to_end(address)
        return value

    def put(self, address: int, value: bytes) -> None:
        if self.max_entries <= 0:
            return
        if address in self.entries:
            self.entries[address] = value
            if self.policy == "lru":
                self.entries.move_to_end(address)
            return
        while len(self.entries) >= self.max_entries:
            self.entries.popitem(last=False)
            self.evictions += 1
        self.entries[address] = value


@dataclass(slots=True)
class QueryMapEntry:
    address: int
    reads: list[Query] = field(default_factory=list)
    write: Optional[Query] = None


@dataclass
class BatchPlan:
    batch_id: int
    per_set_draws: list[list[int]]
    real_counts: list[int]
    write_queries: list[Query]
    permutation: list[int]

    @property
    def addresses(self) -> list[int]:
        return [a for draws in self.per_set_draws for a in draws]

    @property
    def size(self) -> int:
        return sum(len(d) for d in self.per_set_draws)

    @property
    def real(self) -> int:
        return sum(self.real_counts)

    def real_addresses(self) -> list[int]:
        return [a for draws, r in zip(self.per_set_draws, self.real_counts) for a in draws[:r]]


@dataclass
class BatchStats:
    batch_id: int
    size: int
    real: int

    @property
    def utilization(self) -> float:
        return self.real / self.size if self.size else 0.0


@dataclass
class Counters:
    intake: int = 0
    cache_hits: int = 0
    forwarded: int = 0
    entries_created: int = 0
    coalesced: int = 0
    answered_from_write: int = 0
    superseded_writes: int = 0
    merged_writes: int = 0  # writes that landed on an existing entry
    answered_by_batch: int = 0
    answered_after_flight: int = 0
    entries_served: int = 0


class ProxyEngine:
    def __init__(
        self,
        schedule: BudgetSchedule,
        cipher: BlockCipher,
        *,
        n: Optional[int] = None,
        config: Optional[ProxyConfig] = None,
        rng: Optional[random.Random] = None,
    ):
        self.schedule = schedule
        self.config = config or ProxyConfig(element_size=cipher.element_size)
        if self.config.element_size != cipher.element_size:
            raise ValueError("cipher and config disagree on element size")
        self.capacity = schedule.capacity
        self.n = self.capacity if n is None else n
        if not 1 <= self.n <= self.capacity:
            raise ValueError(f"n={self.n} does not fit schedule capacity {self.capacity}")
        self.cipher = cipher
        self.rng = rng if rng is not None else random.Random()
        self.queue_capacity = self.config.queue_capacity or 2 * schedule.batch_size
        self.cache = Cache(self.config.cache_size, self.config.eviction)
        self.query_map: dict[int, QueryMapEntry] = {}
        self.counters = Counters()
        self.batches: list[BatchStats] = []
        # plaintexts of the most recent batch, after its writes were applied
        self.settled: dict[int, bytes] = {}
        self._access_clock = itertools.count(1)
        self._init_state()

    # -- Init --------------------------------------------------------------

    def _init_state(self) -> None:
        T = self.schedule.depth
        cap = self.capacity
        physical = random_permutation(cap, self.rng)
        order = random_permutation(cap, self.rng)
        last = [0] * cap
        # next batch id is T; set t (sized sum_{i>=t} a_i) was last touched at T - t
        self.rd = ReuseDistanceState(depth=T, cur_batch_id=T)
        pos = 0
        for t, size in enumerate(self.schedule.set_sizes(), start=1):
            members = order[pos:pos + size]
            pos += size
            for a in members:
                last[a] = T - t
            self.rd.groups[T - t] = set(members)
        self.pmap = PositionMap(physical, last)

    def initial_blocks(self) -> list[CipherBlock]:
        """Encrypted all-zero contents for every physical slot, in slot order."""
        zero = bytes(self.config.element_size)
        return [self.cipher.encrypt(zero) for _ in range(self.capacity)]

    @property
    def cur_batch_id(self) -> int:
        return self.rd.cur_batch_id

    # -- client intake ---------------------------------------------------------

    def check(self, q: Query) -> None:
        if not 0 <= q.address < self.n:
            raise AddressError(f"address {q.address} outside [0, {self.n})")
        q.validate(self.config.element_size)

    def note_client_access(self, address: int) -> None:
        # a strictly increasing counter: orders accesses without ties
        self.pmap.last_client_access[address] = next(self._access_clock)

    def intake(self, q: Query) -> tuple[list[Response], bool]:
        """Serve ``q`` from the cache if possible; returns (responses, forward?)."""
        self.check(q)
        self.counters.intake += 1
        self.note_client_access(q.address)
        if q.type is OpType.READ:
            cached = self.cache.get(q.address)
            if cached is not None:
                self.counters.cache_hits += 1
                return [Response(q, cached)], False
            return [], True
        self.cache.put(q.address, q.value)
        return [Response(q, None)], True

    def submit(self, q: Query) -> list[Response]:
        """Intake plus forwarding, for drivers without a separate channel."""
        responses, forward = self.intake(q)
        if forward:
            responses.extend(self.enqueue_or_coalesce(q))
        return responses

    # -- batch owner -----------------------------------------------------------

    def enqueue_or_coalesce(self, q: Query, after_flight: bool = False) -> list[Response]:
        """Queue ``q`` or answer it from the query map.

        ``after_flight`` marks a READ that reached the batch owner while a
        batch was in flight; if that batch carried its address and nothing
        is pending for it, the batch's plaintext answers it directly.
        """
        self.counters.forwarded += 1
        entry = self.query_map.get(q.address)
        if entry is None and after_flight and q.type is OpType.READ and q.address in self.settled:
            self.counters.answered_after_flight += 1
            return [Response(q, self.settled[q.address])]
        if entry is None:
            entry = QueryMapEntry(q.address)
            if q.type is OpType.READ:
                entry.reads.append(q)
            else:
                entry.write = q
            self.query_map[q.address] = entry
            self.rd.enqueue(q.address, self.pmap.last_batch_id[q.address])
            self.counters.entries_created += 1
            return []
        if q.type is OpType.READ:
            if entry.write is not None:
                self.counters.answered_from_write += 1
                return [Response(q, entry.write.value)]
            entry.reads.append(q)
            self.counters.coalesced += 1
            return []
        out = [Response(r, q.value) for r in entry.reads]
        self.counters.merged_writes += 1
        if entry.write is not None:
            self.counters.superseded_writes += 1
        entry.reads = []
        entry.write = q
        return out

    def is_full(self) -> bool:
        """Backpressure: intake must stop until the next batch completes."""
        return len(self.query_map) >= self.queue_capacity

    def select_dummies(self, t: int, k: int, exclude: Sequence[int] = ()) -> list[int]:
        if k <= 0:
            return []
        candidates = self.rd.members(t)
        if exclude:
            excluded = set(exclude)
            candidates = [a for a in candidates if a not in excluded]
        if len(candidates) < k:
            raise AssertionError(f"set {t} holds {len(candidates)} addresses, need {k}")
        if len(candidates) == k:
            return candidates
        if self.config.dummy_policy == "random":
            return self.rng.sample(candidates, k)
        stamps = self.pmap.last_client_access
        accessed = [a for a in candidates if stamps[a] is not None]
        if len(accessed) >= k:
            # stamps are unique, so a C sort gives the same answer as a heap, faster
            accessed.sort(key=stamps.__getitem__, reverse=True)
            return accessed[:k]
        never = [a for a in candidates if stamps[a] is None]
        return accessed + self.rng.sample(never, k - len(accessed))

    def build_batch(self) -> BatchPlan:
        draws: list[list[int]] = []
        reals: list[int] = []
        writes: list[Query] = []
        last = self.pmap.last_batch_id
        for t, budget in enumerate(self.schedule.budgets, start=1):
            real = self.rd.pop_queued(t, budget)
            for a in real:
                self.rd.remove(a, last[a])
                w = self.query_map[a].write
                if w is not None:
                    writes.append(w)
            chosen = list(real)
            if self.config.fill_dummies:
                dummies = self.select_dummies(t, budget - len(real))
                for a in dummies:
                    self.rd.remove(a, last[a])
                chosen.extend(dummies)
            draws.append(chosen)
            reals.append(len(real))
        size = sum(len(d) for d in draws)
        perm = random_permutation(size, self.rng) if size else []
        return BatchPlan(self.cur_batch_id, draws, reals, writes, perm)

    def physical_slots(self, plan: BatchPlan) -> list[int]:
        """Slots the batch reads and rewrites, in request order (sorted)."""
        return sorted(self.pmap.map_to_physical(plan.addresses))

    def complete_batch(
        self, plan: BatchPlan, slots: Sequence[int], blocks: Sequence[CipherBlock]
    ) -> tuple[list[tuple[int, CipherBlock]], list[Response]]:
        """Decrypt, answer, apply writes, re-encrypt, shuffle and update state.

        Returns the write-back list (same slots, same order as the read) and
        the client responses the batch produced.
        """
        to_logical = self.pmap.to_logical
        plain: dict[int, bytes] = {}
        for slot, block in zip(slots, blocks):
            plain[to_logical[slot]] = self.cipher.decrypt(block)

        responses: list[Response] = []
        for a in plan.real_addresses():
            entry = self.query_map.pop(a)
            self.counters.entries_served += 1
            if entry.write is not None:
                plain[a] = entry.write.value
            else:
                value = plain[a]
                for r in entry.reads:
                    responses.append(Response(r, value))
                self.counters.answered_by_batch += len(entry.reads)
                if self.config.cache_reads:
                    self.cache.put(a, value)

        logical = plan.addresses
        new_slot = {a: slots[p] for a, p in zip(logical, plan.permutation)}
        owner = {s: a for a, s in new_slot.items()}
        writes = [(s, self.cipher.encrypt(plain[owner[s]])) for s in slots]
        self.settled = plain

        for a, s in new_slot.items():
            self.pmap.assign(a, s)
            self.pmap.last_batch_id[a] = plan.batch_id
        self.rd.add_batch(logical)
        self.batches.append(BatchStats(plan.batch_id, plan.size, plan.real))
        return writes, responses

    def execute_batch(self, plan: BatchPlan, store: BlockStore) -> list[Response]:
        if plan.size == 0:
            self.settled = {}
            self.rd.add_batch([])
            self.batches.append(BatchStats(plan.batch_id, 0, 0))
            return []
        slots = self.physical_slots(plan)
        blocks = store.batch_read(slots)
        writes, responses = self.complete_batch(plan, slots, blocks)
        store.batch_write(writes)
        return responses

    def tick(self, store: BlockStore) -> list[Response]:
        """Batch timer fired: build and execute one batch."""
        return self.execute_batch(self.build_batch(), store)

    # -- accounting --------------------------------------------------------

    def mean_utilization(self, skip: int = 0) -> float:
        stats = self.batches[skip:]
        if not stats:
            return 0.0
        return sum(b.utilization for b in stats) / len(stats)
