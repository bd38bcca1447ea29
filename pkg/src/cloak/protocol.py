"""Length-prefixed binary framing shared by proxy, server and clients.

Frame: ``u32 LE payload length | u8 message type | payload``.  All integers
are little endian.
"""

from __future__ import annotations

import asyncio
import enum
import struct
from typing import Sequence

from cloak.crypto import CipherBlock, NONCE_BYTES, TAG_BYTES

HEADER = struct.Struct("<IB")
MAX_FRAME = 1 << 31


class Msg(enum.IntEnum):
    BATCH_READ = 0x01
    BATCH_READ_RESP = 0x02
    BATCH_WRITE = 0x03
    ACK = 0x04
    HANDSHAKE = 0x05
    READ = 0x10
    WRITE = 0x11
    READ_RESP = 0x12
    WRITE_OK = 0x13
    ERR = 0x14


class ErrCode(enum.IntEnum):
    OUT_OF_RANGE = 1
    MALFORMED = 2
    INTERNAL = 3


class FrameError(Exception):
    pass


_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_ID_ADDR = struct.Struct("<QQ")
_HANDSHAKE = struct.Struct("<QII")
_ERR = struct.Struct("<QH")


def frame(msg: Msg, payload: bytes = b"") -> bytes:
    return HEADER.pack(len(payload), msg) + payload


def parse_frame(data: bytes) -> tuple[Msg, bytes]:
    if len(data) < HEADER.size:
        raise FrameError("truncated header")
    length, kind = HEADER.unpack_from(data)
    payload = data[HEADER.size:]
    if len(payload) != length:
        raise FrameError(f"payload is {len(payload)} bytes, header says {length}")
    try:
        return Msg(kind), payload
    except ValueError as exc:
        raise FrameError(f"unknown message type {kind:#x}") from exc


async def read_frame(reader: asyncio.StreamReader) -> tuple[Msg, bytes]:
    header = await reader.readexactly(HEADER.size)
    length, kind = HEADER.unpack(header)
    if length > MAX_FRAME:
        raise FrameError("frame too large")
    payload = await reader.readexactly(length) if length else b""
    try:
        return Msg(kind), payload
    except ValueError as exc:
        raise FrameError(f"unknown message type {kind:#x}") from exc


# -- proxy <-> storage server ---------------------------------------------

def encode_handshake(capacity: int, element_size: int, block_width: int) -> bytes:
    return frame(Msg.HANDSHAKE, _HANDSHAKE.pack(capacity, element_size, block_width))


def decode_handshake(payload: bytes) -> tuple[int, int, int]:
    if len(payload) != _HANDSHAKE.size:
        raise FrameError("bad handshake")
    return _HANDSHAKE.unpack(payload)


def encode_batch_read(addresses: Sequence[int]) -> bytes:
    return frame(Msg.BATCH_READ, _U32.pack(len(addresses)) + struct.pack(f"<{len(addresses)}Q", *addresses))


def decode_batch_read(payload: bytes) -> list[int]:
    (count,) = _U32.unpack_from(payload)
    if len(payload) != 4 + 8 * count:
        raise FrameError("bad BATCH_READ length")
    return list(struct.unpack_from(f"<{count}Q", payload, 4))


def _split_block(raw: bytes, element_size: int) -> CipherBlock:
    return CipherBlock(raw[:NONCE_BYTES], raw[NONCE_BYTES:NONCE_BYTES + element_size], raw[NONCE_BYTES + element_size:])


def encode_batch_read_resp(blocks: Sequence[CipherBlock]) -> bytes:
    return frame(Msg.BATCH_READ_RESP, _U32.pack(len(blocks)) + b"".join(b.to_bytes() for b in blocks))


def decode_batch_read_resp(payload: bytes, element_size: int) -> list[CipherBlock]:
    width = NONCE_BYTES + element_size + TAG_BYTES
    (count,) = _U32.unpack_from(payload)
    if len(payload) != 4 + width * count:
        raise FrameError("bad BATCH_READ_RESP length")
    return [_split_block(payload[4 + i * width:4 + (i + 1) * width], element_size) for i in range(count)]


def encode_batch_write(writes: Sequence[tuple[int, CipherBlock]]) -> bytes:
    parts = [_U32.pack(len(writes))]
    for addr, block in writes:
        parts.append(_U64.pack(addr))
        parts.append(block.to_bytes())
    return frame(Msg.BATCH_WRITE, b"".join(parts))


def decode_batch_write(payload: bytes, element_size: int) -> list[tuple[int, CipherBlock]]:
    width = NONCE_BYTES + element_size + TAG_BYTES
    (count,) = _U32.unpack_from(payload)
    step = 8 + width
    if len(payload) != 4 + step * count:
        raise FrameError("bad BATCH_WRITE length")
    out = []
    for i in range(count):
        off = 4 + i * step
        (addr,) = _U64.unpack_from(payload, off)
        out.append((addr, _split_block(payload[off + 8:off + step], element_size)))
    return out


# -- client <-> proxy -------------------------------------------------------

def encode_read(op_id: int, address: int) -> bytes:
    return frame(Msg.READ, _ID_ADDR.pack(op_id, address))


def encode_write(op_id: int, address: int, value: bytes) -> bytes:
    return frame(Msg.WRITE, _ID_ADDR.pack(op_id, address) + value)


def decode_request(msg: Msg, payload: bytes) -> tuple[int, int, bytes | None]:
    if len(payload) < _ID_ADDR.size:
        raise FrameError("request too short")
    op_id, address = _ID_ADDR.unpack_from(payload)
    if msg is Msg.READ:
        if len(payload) != _ID_ADDR.size:
            raise FrameError("READ carries no value")
        return op_id, address, None
    return op_id, address, payload[_ID_ADDR.size:]


def encode_read_resp(op_id: int, value: bytes) -> bytes:
    return frame(Msg.READ_RESP, _U64.pack(op_id) + value)


def encode_write_ok(op_id: int) -> bytes:
    return frame(Msg.WRITE_OK, _U64.pack(op_id))


def encode_err(op_id: int, code: int) -> bytes:
    return frame(Msg.ERR, _ERR.pack(op_id, code))


def decode_response(msg: Msg, payload: bytes) -> tuple[int, bytes | None, int | None]:
    """Returns ``(op_id, value, error_code)``."""
    if msg is Msg.READ_RESP:
        return _U64.unpack_from(payload)[0], payload[8:], None
    if msg is Msg.WRITE_OK:
        return _U64.unpack_from(payload)[0], None, None
    if msg is Msg.ERR:
        op_id, code = _ERR.unpack(payload)
        return op_id, None, code
    raise FrameError(f"unexpected {msg.name} from proxy")
