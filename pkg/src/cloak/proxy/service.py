"""Asyncio deployment of the proxy: client intake tasks plus one batch task.

Client connections run the cache path and push forwarded queries into a
bounded channel.  The single batch task owns the engine state: it drains
the channel between timer deadlines, stops draining when the query map is
full (the channel then fills and blocks the intake tasks), and dispatches
one batch per interval whether or not any query arrived.
"""

from __future__ import annotations

import asyncio
import collections
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from cloak import protocol as wire
from cloak.core import OpType, Query
from cloak.protocol import ErrCode, Msg
from cloak.proxy.engine import AddressError, ProxyEngine, Response
from cloak.server import RemoteStore

log = logging.getLogger(__name__)


@dataclass
class ServiceStats:
    started: float = field(default_factory=time.monotonic)
    responses: int = 0
    latency_sum: float = 0.0
    batch_seconds: float = 0.0
    window_util: list[float] = field(default_factory=list)


class ProxyService:
    def __init__(
        self,
        engine: ProxyEngine,
        remote: RemoteStore,
        *,
        clock: str = "real",
        stats_sink: Optional[Callable[[dict], None]] = None,
        stats_interval: float = 1.0,
    ):
        if clock not in ("real", "sim"):
            raise ValueError("clock must be 'real' or 'sim'")
        self.engine = engine
        self.remote = remote
        self.clock = clock
        self.interval = engine.config.batch_interval
        # bounded forwarding channel; the capacity check and the append happen
        # with no await between them, so FIFO order equals intake order
        self.channel: collections.deque[Query] = collections.deque()
        self.channel_capacity = engine.queue_capacity
        self._space = asyncio.Event()
        self._space.set()
        self._nonempty = asyncio.Event()
        self.stats = ServiceStats()
        self.stats_sink = stats_sink
        self.stats_interval = stats_interval
        self.sim_time = 0.0
        self._owners: dict[int, asyncio.StreamWriter] = {}
        self._server: Optional[asyncio.base_events.Server] = None
        self._tasks: list[asyncio.Task] = []
        self._stopping = False

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        if self.remote.capacity is None:
            await self.remote.connect()
        if self.remote.capacity != self.engine.capacity:
            raise RuntimeError(
                f"server capacity {self.remote.capacity} != schedule capacity {self.engine.capacity}"
            )
        await self.remote.load(self.engine.initial_blocks())
        self._server = await asyncio.start_server(self._handle_client, host, port)
        self._tasks.append(asyncio.create_task(self._batch_loop()))
        if self.stats_sink is not None:
            self._tasks.append(asyncio.create_task(self._stats_loop()))
        sock = self._server.sockets[0].getsockname()
        return sock[0], sock[1]

    async def stop(self) -> None:
        self._stopping = True
        for task in self._tasks:
            task.cancel()
        for task in self._tasks:
            try:
                await task
            except (asyncio.CancelledError, Exception):
                pass
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        await self.remote.close()

    def now(self) -> float:
        return self.sim_time if self.clock == "sim" else time.monotonic()

    # -- responses -----------------------------------------------------------

    def _send(self, responses: list[Response]) -> None:
        now = self.now()
        for q, value in responses:
            writer = self._owners.pop(id(q), None) if q.type is OpType.READ else None
            self.stats.responses += 1
            self.stats.latency_sum += now - q.arrival_time
            if writer is None:
                continue
            writer.write(wire.encode_read_resp(q.id, value))

    # -- intake (one task per client connection) ---------------------------

    async def _handle_client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        engine = self.engine
        element_size = engine.config.element_size
        writer.write(wire.encode_handshake(engine.n, element_size, element_size))
        try:
            while True:
                msg, payload = await wire.read_frame(reader)
                if msg not in (Msg.READ, Msg.WRITE):
                    raise wire.FrameError(f"unexpected {msg.name} from client")
                op_id, address, value = wire.decode_request(msg, payload)
                kind = OpType.READ if msg is Msg.READ else OpType.WRITE
                if kind is OpType.WRITE and len(self.channel) >= self.channel_capacity:
                    # a write must not sit in the cache before it is in the channel
                    await self._wait_for_space()
                q = Query(op_id, kind, address, value, self.now())
                try:
                    responses, forward = engine.intake(q)
                except AddressError:
                    writer.write(wire.encode_err(op_id, ErrCode.OUT_OF_RANGE))
                    continue
                except ValueError:
                    writer.write(wire.encode_err(op_id, ErrCode.MALFORMED))
                    continue
                if forward:
                    if kind is OpType.READ:
                        if len(self.channel) >= self.channel_capacity:
                            await self._wait_for_space()
                        self._owners[id(q)] = writer
                    self._push(q)
                for r, v in responses:
                    self.stats.responses += 1
                    writer.write(
                        wire.encode_write_ok(r.id) if r.type is OpType.WRITE
                        else wire.encode_read_resp(r.id, v)
                    )
                if writer.transport.get_write_buffer_size() > 1 << 20:
                    await writer.drain()
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        except wire.FrameError as exc:
            log.warning("dropping client: %s", exc)
        finally:
            writer.close()

    # -- batch owner -------------------------------------------------------

    async def _wait_for_space(self) -> None:
        while len(self.channel) >= self.channel_capacity:
            self._space.clear()
            await self._space.wait()

    def _push(self, q: Query) -> None:
        self.channel.append(q)
        self._nonempty.set()

    def _pop(self) -> Query:
        q = self.channel.popleft()
        if not self.channel:
            self._nonempty.clear()
        self._space.set()
        return q

    def _drain_available(self, after_flight: int = 0) -> None:
        """Move channel entries into the query map until it fills.

        The first ``after_flight`` entries arrived while a batch was in
        flight and may be answered from that batch's plaintexts.
        """
        engine = self.engine
        while self.channel and not engine.is_full():
            q = self._pop()
            self._send(engine.enqueue_or_coalesce(q, after_flight > 0))
            after_flight -= 1

    async def _run_batch(self) -> None:
        engine = self.engine
        t0 = time.perf_counter()
        plan = engine.build_batch()
        if plan.size:
            slots = engine.physical_slots(plan)
            blocks = await self.remote.batch_read(slots)
            writes, responses = engine.complete_batch(plan, slots, blocks)
            await self.remote.batch_write(writes)
        else:
            engine.execute_batch(plan, None)
            responses = []
        self.stats.batch_seconds += time.perf_counter() - t0
        self._send(responses)
        self.stats.window_util.append(engine.batches[-1].utilization)
        self._drain_available(after_flight=len(self.channel))

    async def _batch_loop(self) -> None:
        if self.clock == "sim":
            while not self._stopping:
                await asyncio.sleep(0)
                self._drain_available()
                await self._run_batch()
                self.sim_time += self.interval
            return
        loop = asyncio.get_running_loop()
        deadline = loop.time() + self.interval
        while not self._stopping:
            while not self.engine.is_full():
                self._drain_available()
                if self.engine.is_full():
                    break
                timeout = deadline - loop.time()
                if timeout <= 0:
                    break
                try:
                    await asyncio.wait_for(self._nonempty.wait(), timeout)
                except asyncio.TimeoutError:
                    break
            # full query map: wait out the interval; a negative remainder is zero
            delay = deadline - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            await self._run_batch()
            deadline += self.interval
            if deadline < loop.time():
                deadline = loop.time()

    async def _stats_loop(self) -> None:
        last_resp, last_t = 0, time.monotonic()
        while True:
            await asyncio.sleep(self.stats_interval)
            self.stats_sink(self.snapshot(last_resp, last_t))
            last_resp, last_t = self.stats.responses, time.monotonic()
            self.stats.window_util.clear()

    def snapshot(self, last_resp: int = 0, last_t: Optional[float] = None) -> dict:
        now = time.monotonic()
        last_t = self.stats.started if last_t is None else last_t
        s = self.stats
        util = s.window_util
        return {
            "time": now - s.started,
            "batches": len(self.engine.batches),
            "ops_per_s": (s.responses - last_resp) / max(now - last_t, 1e-9),
            "mean_latency_ms": 1000 * s.latency_sum / s.responses if s.responses else 0.0,
            "utilization": util[-1] if util else None,
            "mean_utilization": sum(util) / len(util) if util else None,
            "queue_len": len(self.engine.query_map),
            "config": {
                "budgets": list(self.engine.schedule.budgets),
                "batch_interval": self.interval,
                "cache": self.engine.config.cache_size,
                "queue_capacity": self.engine.queue_capacity,
                "element_size": self.engine.config.element_size,
            },
        }


def json_line_sink(stream) -> Callable[[dict], None]:
    def sink(d: dict) -> None:
        stream.write(json.dumps(d) + "\n")
        stream.flush()
    return sink
