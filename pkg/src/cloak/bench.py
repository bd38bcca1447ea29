"""Benchmark drivers and the in-process harness.

Three ways to run the stack:

* ``sim``: the engine and a :class:`SlotStore` in one loop under a virtual
  clock.  Deterministic given the seed and fast enough for CI.
* ``realtime``: the same loop with the real clock, real sleeps and real
  crypto, so throughput reflects per-batch processing cost.
* ``tcp``: storage server, proxy service and clients as asyncio tasks
  talking over loopback sockets.

The unsafe baseline (``system = "unsafe"``) is a plaintext store served one
op at a time over the same client protocol.
"""

from __future__ import annotations

import asyncio
import collections
import dataclasses
import gc
import random
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from cloak.core import BudgetSchedule, OpType, Query
from cloak.crypto import BlockCipher, generate_key
from cloak.planner import find_first_budget, set_budgets
from cloak.proxy.engine import ProxyConfig, ProxyEngine, Response
from cloak.storage import SlotStore
from cloak.workload import (
    ClientOp,
    gen_temporal_zipf_trace,
    ingest_csv_trace,
    make_ops,
    ops_from_records,
    split_round_robin,
)

# spacing of events that share one virtual instant; keeps timestamps distinct
EPS = 1e-9


@dataclass
class RunMetrics:
    throughput: float  # ops/s
    mean_latency: float  # ms
    batch_utilization: float
    ops: int = 0
    batches: int = 0
    elapsed: float = 0.0
    p50_latency: float = 0.0
    p99_latency: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def summarize(ops: Sequence[ClientOp], utilizations: Sequence[float], elapsed: float,
              batches: int, **extra) -> RunMetrics:
    done = [o for o in ops if o.response_time is not None]
    lat = sorted(1000.0 * o.latency for o in done)
    if lat:
        p50 = lat[len(lat) // 2]
        p99 = lat[min(len(lat) - 1, int(0.99 * len(lat)))]
        mean = statistics.fmean(lat)
    else:
        p50 = p99 = mean = 0.0
    util = statistics.fmean(utilizations) if utilizations else 0.0
    return RunMetrics(
        throughput=len(done) / elapsed if elapsed > 0 else 0.0,
        mean_latency=mean,
        batch_utilization=util,
        ops=len(done),
        batches=batches,
        elapsed=elapsed,
        p50_latency=p50,
        p99_latency=p99,
        extra=extra,
    )


class Harness:
    """Drives a :class:`ProxyEngine` against an in-process store.

    Intake follows the deployed proxy: cache hits are answered at once,
    forwarded queries enter the query map, spill into a bounded channel when
    the map is full, and client intake stops when the channel is full too.
    One batch runs per interval.  With ``clock="sim"`` time is virtual
    (batch ``k`` fires at ``(k + 1) * interval``); with ``clock="real"`` the
    loop sleeps and the store sees real receive times.
    """

    def __init__(self, engine: ProxyEngine, *, clock: str = "sim", keep_log: bool = True,
                 max_intake_per_tick: Optional[int] = None):
        if clock not in ("sim", "real"):
            raise ValueError("clock must be 'sim' or 'real'")
        self.engine = engine
        self.clock = clock
        self.interval = engine.config.batch_interval
        self.vt = 0.0
        self.store = SlotStore(engine.capacity, engine.config.element_size,
                               clock=self._now, keep_log=keep_log)
        self.store.load(engine.initial_blocks())
        self.channel: collections.deque[tuple[Query, ClientOp]] = collections.deque()
        self.channel_capacity = engine.queue_capacity
        # closed loop would otherwise spin forever on cache hits in sim mode
        self.max_intake_per_tick = max_intake_per_tick or 16 * engine.schedule.batch_size
        self._owner: dict[int, ClientOp] = {}
        self._t0 = 0.0
        # batches that ran while the workload still had ops left to issue
        self.loaded_batches = 0
        self._lanes: Optional[list[collections.deque]] = None
        self._outstanding: list[int] = []
        self._window = 1
        self._ready: collections.deque[int] = collections.deque()

    # -- time ---------------------------------------------------------------

    def _now(self) -> float:
        return self.vt if self.clock == "sim" else time.monotonic() - self._t0

    def _advance(self, target: float = 0.0) -> float:
        """Next event time: strictly after the last one and at least ``target``."""
        if self.clock == "sim":
            self.vt = max(self.vt + EPS, target)
        else:
            self.vt = max(self.vt + EPS, time.monotonic() - self._t0)
        return self.vt

    # -- plumbing -------------------------------------------------------------

    def _respond(self, responses: Sequence[Response]) -> None:
        if not responses:
            return
        t = self._advance()
        for q, value in responses:
            op = self._owner.pop(id(q))
            op.response_time = t
            if op.kind is OpType.READ:
                op.result = value
            if self._lanes is not None:
                lane = op.client
                self._outstanding[lane] -= 1
                if self._outstanding[lane] == self._window - 1 and self._lanes[lane]:
                    self._ready.append(lane)

    def _blocked(self) -> bool:
        return self.engine.is_full() and len(self.channel) >= self.channel_capacity

    def _intake(self, op: ClientOp, at: float, stamp_issue: bool) -> None:
        engine = self.engine
        t = self._advance(at)
        if stamp_issue:
            op.issue_time = t
        q = Query(op.id, op.kind, op.address, op.value, t)
        self._owner[id(q)] = op
        responses, forward = engine.intake(q)
        if forward:
            if engine.is_full():
                self.channel.append((q, op))
            else:
                responses.extend(engine.enqueue_or_coalesce(q))
        self._respond(responses)

    def _drain(self) -> None:
        engine = self.engine
        while self.channel and not engine.is_full():
            q, _ = self.channel.popleft()
            self._respond(engine.enqueue_or_coalesce(q))

    def _batch(self, deadline: float) -> None:
        self._advance(deadline)
        self._respond(self.engine.tick(self.store))
        self._drain()

    # -- driver -----------------------------------------------------------------

    def run(
        self,
        ops: Sequence[ClientOp],
        *,
        rate: float = 0.0,
        clients: Optional[int] = None,
        window: int = 1,
        duration: Optional[float] = None,
        max_batches: Optional[int] = None,
        idle_batches: int = 0,
    ) -> float:
        """Replay ``ops``; returns the elapsed (virtual or real) seconds.

        ``rate > 0`` is open loop: op ``j`` is issued at ``j / rate`` and
        waits if the proxy is blocked.  ``rate == 0`` is closed loop.  With
        ``clients`` set, ops are dealt round-robin to that many clients and
        each client keeps at most ``window`` ops unanswered; otherwise ops are
        issued as fast as the proxy accepts them.  The run ends when every op
        is answered or the duration or batch limit is reached; then
        ``idle_batches`` more batches run with no traffic.
        """
        interval = self.interval
        real = self.clock == "real"
        if rate > 0 and clients is not None:
            raise ValueError("open loop ignores clients; pass one or the other")
        if clients is not None:
            self._lanes = [collections.deque() for _ in range(clients)]
            for j, op in enumerate(ops):
                op.client = j % clients
                self._lanes[op.client].append(op)
            self._outstanding = [0] * clients
            self._window = window
            self._ready = collections.deque(c for c in range(clients) if self._lanes[c])
        if real:
            # move setup garbage out of the collector's view so a full
            # collection cannot stall the batch timer mid-run
            gc.collect()
            gc.freeze()
        self._t0 = time.monotonic()
        self.vt = 0.0
        issued = 0
        n_ops = len(ops)
        k = 0
        deadline = interval
        t_end = duration if duration is not None else float("inf")
        last_response = 0.0

        def elapsed() -> float:
            return time.monotonic() - self._t0

        def next_op() -> Optional[ClientOp]:
            """The next op to issue, or None if every client is waiting."""
            if self._lanes is None:
                return ops[issued]
            if not self._ready:
                return None
            lane = self._ready.popleft()
            op = self._lanes[lane].popleft()
            self._outstanding[lane] += 1
            if self._outstanding[lane] < self._window and self._lanes[lane]:
                self._ready.append(lane)
            return op

        while issued < n_ops or self._owner or self.channel:
            if max_batches is not None and k >= max_batches:
                break
            if deadline > t_end + 1e-12:
                break
            taken = 0
            # work already waiting when the phase starts is taken in even if the
            # timer has passed; in the service it would run during batch I/O
            phase_start = elapsed() if real else 0.0
            overrun = real and phase_start >= deadline
            while issued < n_ops and not self._blocked() and taken < self.max_intake_per_tick:
                if rate > 0:
                    op = ops[issued]
                    at = issued / rate
                    if at >= deadline and not (real and at <= phase_start):
                        break
                    if real and at > phase_start:
                        now = elapsed()
                        if now >= deadline:
                            break
                        if at > now:
                            # sleep until the next arrival, never past the batch timer
                            time.sleep(min(at, deadline) - now)
                            if elapsed() >= deadline:
                                break
                    op.issue_time = at
                    self._intake(op, max(at, deadline - interval), False)
                else:
                    if real and not overrun and elapsed() >= deadline:
                        break
                    op = next_op()
                    if op is None:
                        break
                    self._intake(op, deadline - interval, True)
                taken += 1
                issued += 1
            if real:
                delay = deadline - elapsed()
                if delay > 0:
                    time.sleep(delay)
            self._batch(deadline)
            k += 1
            if issued < n_ops:
                self.loaded_batches = k
            last_response = self.vt
            deadline += interval
            if real and deadline < elapsed():
                # a batch overran the interval: the next one goes out at once
                deadline = elapsed()
        for _ in range(idle_batches):
            if real:
                delay = deadline - elapsed()
                if delay > 0:
                    time.sleep(delay)
            self._batch(deadline)
            deadline += interval
        self._lanes = None
        if real:
            gc.unfreeze()
        return last_response


# -- configuration and entry points --------------------------------------------


@dataclass
class BenchConfig:
    mode: str = "sim"  # sim | realtime | tcp
    system: str = "cloak"  # cloak | unsafe
    n: int = 10_000
    first_budget: Optional[int] = None
    batch_size: Optional[int] = None  # target; picks first_budget when that is unset
    s: float = 1.0
    length: int = 100_000
    mix: float = 0.5
    trace: Optional[str] = None
    rate: float = 0.0
    duration: Optional[float] = None
    clients: int = 4
    window: int = 256
    batch_interval: float = 0.020
    cache_size: int = 1000
    queue_capacity: Optional[int] = None
    element_size: int = 1024
    eviction: str = "lru"
    cache_reads: bool = False
    fill_dummies: bool = True
    warmup_batches: int = 0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        d = dict(d.get("bench", d))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown bench options: {sorted(unknown)}")
        return cls(**d)

    def schedule(self) -> BudgetSchedule:
        fb = self.first_budget
        if fb is None:
            target = self.batch_size or 4 * max(1, int(self.n ** 0.5))
            fb = find_first_budget(self.n, target)
        return set_budgets(self.n, fb)

    def proxy_config(self) -> ProxyConfig:
        return ProxyConfig(
            element_size=self.element_size,
            batch_interval=self.batch_interval,
            cache_size=self.cache_size,
            queue_capacity=self.queue_capacity,
            eviction=self.eviction,
            cache_reads=self.cache_reads,
            fill_dummies=self.fill_dummies,
        )


def build_ops(cfg: BenchConfig) -> list[ClientOp]:
    if cfg.trace:
        ops = ops_from_records(ingest_csv_trace(cfg.trace, cfg.element_size, cfg.seed))
        if max(o.address for o in ops) >= cfg.n:
            raise ValueError(f"trace has more than n={cfg.n} distinct keys")
        return ops
    addresses = gen_temporal_zipf_trace(cfg.n, cfg.length, cfg.s, cfg.seed)
    return make_ops(addresses, cfg.mix, cfg.element_size, cfg.seed)


def make_engine(cfg: BenchConfig, schedule: Optional[BudgetSchedule] = None,
                rng: Optional[random.Random] = None) -> ProxyEngine:
    schedule = schedule or cfg.schedule()
    rng = rng or random.Random(cfg.seed)
    cipher = BlockCipher(generate_key(), cfg.element_size)
    return ProxyEngine(schedule, cipher, n=cfg.n, config=cfg.proxy_config(), rng=rng)


def run_harness(cfg: BenchConfig, ops: Optional[list[ClientOp]] = None,
                engine: Optional[ProxyEngine] = None) -> tuple[RunMetrics, Harness, list[ClientOp]]:
    ops = build_ops(cfg) if ops is None else ops
    engine = engine or make_engine(cfg)
    harness = Harness(engine, clock="sim" if cfg.mode == "sim" else "real")
    elapsed = harness.run(ops, rate=cfg.rate, duration=cfg.duration)
    util = [b.utilization for b in engine.batches[cfg.warmup_batches:]]
    # steady state: sets are populated and the client still has work queued
    loaded = engine.batches[engine.schedule.depth:harness.loaded_batches]
    steady = statistics.fmean(b.utilization for b in loaded) if loaded else 0.0
    metrics = summarize(ops, util, elapsed, len(engine.batches), mode=cfg.mode,
                        steady_utilization=steady,
                        budgets=list(engine.schedule.budgets),
                        batch_size=engine.schedule.batch_size,
                        cache_hits=engine.counters.cache_hits)
    return metrics, harness, ops


async def run_tcp(cfg: BenchConfig, ops: Optional[list[ClientOp]] = None,
                  stats_sink: Optional[Callable[[dict], None]] = None) -> tuple[RunMetrics, list[ClientOp]]:
    from cloak.client import CloakClient, replay
    from cloak.proxy.service import ProxyService
    from cloak.server import RemoteStore, StorageServer, UnsafeServer

    ops = build_ops(cfg) if ops is None else ops
    lanes = split_round_robin(ops, cfg.clients)
    if cfg.system == "unsafe":
        server = UnsafeServer(cfg.n, cfg.element_size)
        host, port = await server.start()
        clients = [await CloakClient.connect(host, port) for _ in range(cfg.clients)]
        t0 = time.monotonic()
        await replay(clients, lanes, rate=cfg.rate, window=cfg.window)
        elapsed = time.monotonic() - t0
        for c in clients:
            await c.close()
        await server.close()
        return summarize(ops, [], elapsed, 0, mode="tcp", system="unsafe"), ops

    engine = make_engine(cfg)
    storage = StorageServer(engine.capacity, cfg.element_size, keep_log=False)
    s_host, s_port = await storage.start()
    service = ProxyService(engine, RemoteStore(s_host, s_port, cfg.element_size),
                           stats_sink=stats_sink)
    host, port = await service.start()
    clients = [await CloakClient.connect(host, port) for _ in range(cfg.clients)]
    start_batches = len(engine.batches)
    t0 = time.monotonic()
    await replay(clients, lanes, rate=cfg.rate, window=cfg.window)
    elapsed = time.monotonic() - t0
    batches = engine.batches[start_batches + cfg.warmup_batches:]
    for c in clients:
        await c.close()
    await service.stop()
    await storage.close()
    return summarize(ops, [b.utilization for b in batches], elapsed, len(batches),
                     mode="tcp", system="cloak", budgets=list(engine.schedule.budgets),
                     batch_size=engine.schedule.batch_size,
                     cache_hits=engine.counters.cache_hits,
                     counters=dataclasses.asdict(engine.counters)), ops


def run_benchmark(cfg: BenchConfig) -> RunMetrics:
    if cfg.mode == "tcp":
        metrics, _ = asyncio.run(run_tcp(cfg))
        return metrics
    if cfg.system != "cloak":
        raise ValueError("the unsafe baseline only runs in tcp mode")
    if cfg.mode not in ("sim", "realtime"):
        raise ValueError(f"unknown mode {cfg.mode!r}")
    metrics, _, _ = run_harness(cfg)
    return metrics
