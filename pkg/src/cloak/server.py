"""Networked storage server, its proxy-side stub, and the unsafe baseline server."""

from __future__ import annotations

import asyncio
import logging
from typing import Optional, Sequence, TextIO

from cloak import protocol as wire
from cloak.crypto import CipherBlock, block_width
from cloak.protocol import ErrCode, Msg
from cloak.storage import SlotStore, StorageError

log = logging.getLogger(__name__)


class StorageServer:
    """Serves one :class:`SlotStore` over TCP.

    The store starts empty.  The proxy's first ``BATCH_WRITE`` (before any
    ``BATCH_READ``) must cover every slot exactly once and is taken as the
    initial upload; it is not part of the adversary log.
    """

    def __init__(self, capacity: int, element_size: int, log_file: Optional[TextIO] = None,
                 keep_log: bool = True):
        self.store = SlotStore(capacity, element_size, log_file=log_file, keep_log=keep_log)
        self.width = block_width(element_size)
        self._server: Optional[asyncio.base_events.Server] = None

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        self._server = await asyncio.start_server(self._handle, host, port)
        sock = self._server.sockets[0].getsockname()
        return sock[0], sock[1]

    async def serve_forever(self) -> None:
        assert self._server is not None
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        store = self.store
        writer.write(wire.encode_handshake(store.capacity, store.element_size, self.width))
        try:
            while True:
                msg, payload = await wire.read_frame(reader)
                if msg is Msg.BATCH_READ:
                    blocks = store.batch_read(wire.decode_batch_read(payload))
                    writer.write(wire.encode_batch_read_resp(blocks))
                elif msg is Msg.BATCH_WRITE:
                    writes = wire.decode_batch_write(payload, store.element_size)
                    if not store.initialized:
                        writes.sort(key=lambda w: w[0])
                        if [a for a, _ in writes] != list(range(store.capacity)):
                            raise StorageError("initial upload must cover every slot once")
                        store.load([b for _, b in writes])
                    else:
                        store.batch_write(writes)
                    writer.write(wire.frame(Msg.ACK))
                else:
                    raise wire.FrameError(f"unexpected {msg.name}")
                await writer.drain()
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        except (StorageError, wire.FrameError) as exc:
            log.warning("closing proxy connection: %s", exc)
            writer.write(wire.encode_err(0, ErrCode.MALFORMED))
        finally:
            writer.close()


class RemoteStore:
    """Proxy-side stub for :class:`StorageServer` with idempotent retransmission."""

    def __init__(self, host: str, port: int, element_size: int, retries: int = 3):
        self.host = host
        self.port = port
        self.element_size = element_size
        self.retries = retries
        self.capacity: Optional[int] = None
        self._reader: Optional[asyncio.StreamReader] = None
        self._writer: Optional[asyncio.StreamWriter] = None

    async def connect(self) -> None:
        self._reader, self._writer = await asyncio.open_connection(self.host, self.port)
        msg, payload = await wire.read_frame(self._reader)
        if msg is not Msg.HANDSHAKE:
            raise wire.FrameError("server did not send a handshake")
        capacity, element_size, width = wire.decode_handshake(payload)
        if element_size != self.element_size or width != block_width(self.element_size):
            raise wire.FrameError(
                f"server stores {element_size}-byte elements, proxy expects {self.element_size}"
            )
        self.capacity = capacity

    async def close(self) -> None:
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except ConnectionError:
                pass

    async def _exchange(self, data: bytes, expect: Msg) -> bytes:
        for attempt in range(self.retries + 1):
            try:
                if self._writer is None:
                    await self.connect()
                self._writer.write(data)
                await self._writer.drain()
                msg, payload = await wire.read_frame(self._reader)
                if msg is Msg.ERR:
                    raise StorageError("server rejected the batch")
                if msg is not expect:
                    raise wire.FrameError(f"expected {expect.name}, got {msg.name}")
                return payload
            except (ConnectionError, asyncio.IncompleteReadError):
                if attempt == self.retries:
                    raise
                log.warning("storage connection lost, retransmitting batch")
                self._writer = None
                await asyncio.sleep(0.05 * (attempt + 1))
        raise AssertionError("unreachable")

    async def load(self, blocks: Sequence[CipherBlock]) -> None:
        await self._exchange(wire.encode_batch_write(list(enumerate(blocks))), Msg.ACK)

    async def batch_read(self, addresses: Sequence[int]) -> list[CipherBlock]:
        payload = await self._exchange(wire.encode_batch_read(addresses), Msg.BATCH_READ_RESP)
        return wire.decode_batch_read_resp(payload, self.element_size)

    async def batch_write(self, writes: Sequence[tuple[int, CipherBlock]]) -> bool:
        await self._exchange(wire.encode_batch_write(writes), Msg.ACK)
        return True


class UnsafeServer:
    """Non-oblivious baseline: plaintext values, one round trip per operation."""

    def __init__(self, n: int, element_size: int):
        self.n = n
        self.element_size = element_size
        self.values: list[bytes] = [bytes(element_size)] * n
        self._server: Optional[asyncio.base_events.Server] = None

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        self._server = await asyncio.start_server(self._handle, host, port)
        sock = self._server.sockets[0].getsockname()
        return sock[0], sock[1]

    async def serve_forever(self) -> None:
        assert self._server is not None
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        writer.write(wire.encode_handshake(self.n, self.element_size, self.element_size))
        values = self.values
        try:
            while True:
                msg, payload = await wire.read_frame(reader)
                op_id, address, value = wire.decode_request(msg, payload)
                if not 0 <= address < self.n:
                    writer.write(wire.encode_err(op_id, ErrCode.OUT_OF_RANGE))
                elif msg is Msg.READ:
                    writer.write(wire.encode_read_resp(op_id, values[address]))
                else:
                    values[address] = value
                    writer.write(wire.encode_write_ok(op_id))
                if writer.transport.get_write_buffer_size() > 1 << 20:
                    await writer.drain()
        except (asyncio.IncompleteReadError, ConnectionError, wire.FrameError):
            pass
        finally:
            writer.close()
