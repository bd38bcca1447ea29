"""The untrusted storage server: a flat array of ciphertext slots.

The store also keeps the adversary's view of the system, one
:class:`BatchLogEntry` per batch, which the auditor consumes.
"""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence, TextIO

from cloak.crypto import CipherBlock


class StorageError(Exception):
    pass


class ProtocolViolation(StorageError):
    """The proxy sent a malformed batch (duplicate or out-of-range address)."""


@dataclass
class BatchLogEntry:
    batch_index: int
    receive_time: float
    read_addresses: list[int]
    written: list[tuple[int, CipherBlock]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "batch_index": self.batch_index,
                "receive_time": self.receive_time,
                "read": self.read_addresses,
                "written": [[a, b.to_bytes().hex()] for a, b in self.written],
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "BatchLogEntry":
        d = json.loads(line)
        return cls(
            batch_index=d["batch_index"],
            receive_time=d["receive_time"],
            read_addresses=list(d["read"]),
            written=[(a, CipherBlock.from_bytes(bytes.fromhex(h))) for a, h in d["written"]],
        )


def load_log(path: str) -> list[BatchLogEntry]:
    with open(path) as fh:
        return [BatchLogEntry.from_json(line) for line in fh if line.strip()]


def write_log(entries: Iterable[BatchLogEntry], path: str) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")


class SlotStore:
    """Fixed-capacity slot array with batched reads and writes."""

    def __init__(
        self,
        capacity: int,
        element_size: int,
        *,
        clock: Callable[[], float] = time.monotonic,
        retention: Optional[int] = None,
        log_file: Optional[TextIO] = None,
        keep_log: bool = True,
    ):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.element_size = element_size
        self.slots: Optional[list[CipherBlock]] = None
        self._clock = clock
        self._log: deque[BatchLogEntry] = deque(maxlen=retention)
        self._keep_log = keep_log
        self._log_file = log_file
        self._pending: Optional[BatchLogEntry] = None
        self._pending_blocks: Optional[list[CipherBlock]] = None
        self._last_write: Optional[list[tuple[int, CipherBlock]]] = None
        self.batches_completed = 0

    @property
    def initialized(self) -> bool:
        return self.slots is not None

    def load(self, initial_blocks: Sequence[CipherBlock]) -> None:
        if len(initial_blocks) != self.capacity:
            raise StorageError(
                f"expected {self.capacity} initial blocks, got {len(initial_blocks)}"
            )
        self.slots = list(initial_blocks)

    def _check(self, addresses: Sequence[int]) -> None:
        if len(set(addresses)) != len(addresses):
            raise ProtocolViolation("duplicate address in batch")
        for a in addresses:
            if not 0 <= a < self.capacity:
                raise ProtocolViolation(f"address {a} out of range")

    def batch_read(self, addresses: Sequence[int]) -> list[CipherBlock]:
        if self.slots is None:
            raise StorageError("store not initialized")
        addresses = list(addresses)
        if self._pending is not None:
            # retransmission of the in-flight batch
            if addresses == self._pending.read_addresses and self._pending_blocks is not None:
                return list(self._pending_blocks)
            raise ProtocolViolation("new batch read before previous batch was written")
        if not addresses:
            raise ProtocolViolation("empty batch")
        self._check(addresses)
        blocks = [self.slots[a] for a in addresses]
        self._pending = BatchLogEntry(self.batches_completed, self._clock(), addresses)
        self._pending_blocks = blocks
        return list(blocks)

    def batch_write(self, writes: Sequence[tuple[int, CipherBlock]]) -> bool:
        if self.slots is None:
            raise StorageError("store not initialized")
        writes = list(writes)
        if not writes:
            raise ProtocolViolation("empty write batch")
        if self._pending is None:
            if self._last_write is not None and writes == self._last_write:
                return True
            raise ProtocolViolation("write without a preceding batch read")
        self._check([a for a, _ in writes])
        for a, block in writes:
            self.slots[a] = block
        entry = self._pending
        entry.written = writes
        self._pending = None
        self._pending_blocks = None
        self._last_write = writes
        self.batches_completed += 1
        if self._keep_log:
            self._log.append(entry)
        if self._log_file is not None:
            self._log_file.write(entry.to_json() + "\n")
        return True

    def adversary_log(self) -> list[BatchLogEntry]:
        return list(self._log)

    def iter_log(self) -> Iterator[BatchLogEntry]:
        return iter(self._log)

    def flush_log(self, path: str) -> None:
        write_log(self._log, path)


def init_store(
    capacity: int,
    element_size: int,
    initial_blocks: Sequence[CipherBlock],
    **kwargs,
) -> SlotStore:
    store = SlotStore(capacity, element_size, **kwargs)
    store.load(initial_blocks)
    return store
