"""Asyncio client SDK and trace replay."""

from __future__ import annotations

import asyncio
import itertools
import time
from typing import Optional, Sequence

from cloak import protocol as wire
from cloak.core import OpType
from cloak.protocol import ErrCode, Msg
from cloak.workload import ClientOp


class ClientError(Exception):
    def __init__(self, code: int):
        self.code = code
        try:
            name = ErrCode(code).name
        except ValueError:
            name = str(code)
        super().__init__(f"proxy returned error {name}")


class CloakClient:
    """One pipelined connection; responses are matched to requests by id."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter,
                 n: int, element_size: int):
        self._reader = reader
        self._writer = writer
        self.n = n
        self.element_size = element_size
        self._ids = itertools.count(1)
        self._pending: dict[int, asyncio.Future] = {}
        self._reader_task = asyncio.create_task(self._read_loop())

    @classmethod
    async def connect(cls, host: str, port: int) -> "CloakClient":
        reader, writer = await asyncio.open_connection(host, port)
        msg, payload = await wire.read_frame(reader)
        if msg is not Msg.HANDSHAKE:
            raise wire.FrameError("proxy did not send a handshake")
        n, element_size, _ = wire.decode_handshake(payload)
        return cls(reader, writer, n, element_size)

    async def close(self) -> None:
        self._reader_task.cancel()
        self._writer.close()
        try:
            await self._writer.wait_closed()
        except ConnectionError:
            pass

    async def _read_loop(self) -> None:
        try:
            while True:
                msg, payload = await wire.read_frame(self._reader)
                op_id, value, err = wire.decode_response(msg, payload)
                fut = self._pending.pop(op_id, None)
                if fut is None or fut.done():
                    continue
                if err is not None:
                    fut.set_exception(ClientError(err))
                else:
                    fut.set_result(value)
        except (asyncio.IncompleteReadError, ConnectionError) as exc:
            for fut in self._pending.values():
                if not fut.done():
                    fut.set_exception(ConnectionError("proxy connection lost"))
            self._pending.clear()
            if not isinstance(exc, asyncio.IncompleteReadError):
                raise

    def _check(self, address: int) -> None:
        if not 0 <= address < self.n:
            raise ClientError(ErrCode.OUT_OF_RANGE)

    def send_read(self, address: int, op_id: Optional[int] = None) -> asyncio.Future:
        self._check(address)
        op_id = next(self._ids) if op_id is None else op_id
        fut = asyncio.get_running_loop().create_future()
        self._pending[op_id] = fut
        self._writer.write(wire.encode_read(op_id, address))
        return fut

    def send_write(self, address: int, value: bytes, op_id: Optional[int] = None) -> asyncio.Future:
        self._check(address)
        if len(value) != self.element_size:
            raise ValueError(f"value must be {self.element_size} bytes")
        op_id = next(self._ids) if op_id is None else op_id
        fut = asyncio.get_running_loop().create_future()
        self._pending[op_id] = fut
        self._writer.write(wire.encode_write(op_id, address, value))
        return fut

    async def drain(self) -> None:
        await self._writer.drain()

    async def read(self, address: int) -> bytes:
        fut = self.send_read(address)
        await self.drain()
        return await fut

    async def write(self, address: int, value: bytes) -> None:
        fut = self.send_write(address, value)
        await self.drain()
        await fut


async def _run_lane(client: CloakClient, ops: Sequence[ClientOp], rate_per_lane: float,
                    window: int, t0: float) -> None:
    loop = asyncio.get_running_loop()
    slots = asyncio.Semaphore(window)
    inflight: set[asyncio.Future] = set()

    def finish(op: ClientOp, fut: asyncio.Future) -> None:
        op.response_time = time.monotonic()
        if not fut.cancelled() and fut.exception() is None:
            r = fut.result()
            op.result = r if op.kind is OpType.READ else None
        slots.release()
        inflight.discard(fut)

    for i, op in enumerate(ops):
        if rate_per_lane > 0:
            due = t0 + i / rate_per_lane
            delay = due - time.monotonic()
            if delay > 0:
                await asyncio.sleep(delay)
        await slots.acquire()
        op.issue_time = time.monotonic()
        if op.kind is OpType.READ:
            fut = client.send_read(op.address, op.id)
        else:
            fut = client.send_write(op.address, op.value, op.id)
        inflight.add(fut)
        fut.add_done_callback(lambda f, op=op: finish(op, f))
        if client._writer.transport.get_write_buffer_size() > 1 << 16:
            await client.drain()
        elif rate_per_lane > 0 or i % 64 == 63:
            await asyncio.sleep(0)
    await client.drain()
    if inflight:
        await asyncio.gather(*list(inflight), return_exceptions=True)
    del loop


async def replay(
    clients: Sequence[CloakClient],
    lanes: Sequence[Sequence[ClientOp]],
    rate: float = 0.0,
    window: int = 256,
) -> list[ClientOp]:
    """Issue each lane's ops in order on its own connection.

    ``rate > 0`` is open loop (aggregate ops/s spread over the lanes);
    ``rate == 0`` is closed loop with at most ``window`` outstanding ops per
    connection.  Sends that hit backpressure wait; nothing is dropped.
    """
    if len(clients) != len(lanes):
        raise ValueError("one lane per client")
    per_lane = rate / len(lanes) if rate > 0 else 0.0
    t0 = time.monotonic()
    big_window = window if rate <= 0 else 1 << 30
    await asyncio.gather(*[
        _run_lane(c, lane, per_lane, big_window, t0) for c, lane in zip(clients, lanes)
    ])
    return [op for lane in lanes for op in lane]
