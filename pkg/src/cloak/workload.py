"""Client operations, trace ingestion and the synthetic temporal-Zipf generator."""

from __future__ import annotations

import csv
import hashlib
import json
import random
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from cloak.core import OpType


@dataclass(slots=True)
class ClientOp:
    id: int
    kind: OpType
    address: int
    value: Optional[bytes] = None
    client: int = 0
    issue_time: float = 0.0
    response_time: Optional[float] = None
    result: Optional[bytes] = None

    @property
    def done(self) -> bool:
        return self.response_time is not None

    @property
    def latency(self) -> float:
        return self.response_time - self.issue_time

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "client": self.client,
                "kind": self.kind.value,
                "address": self.address,
                "value": None if self.value is None else self.value.hex(),
                "issue": self.issue_time,
                "response": self.response_time,
                "result": None if self.result is None else self.result.hex(),
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "ClientOp":
        d = json.loads(line)
        return cls(
            id=d["id"],
            kind=OpType(d["kind"]),
            address=d["address"],
            value=None if d.get("value") is None else bytes.fromhex(d["value"]),
            client=d.get("client", 0),
            issue_time=d["issue"],
            response_time=d.get("response"),
            result=None if d.get("result") is None else bytes.fromhex(d["result"]),
        )


def save_history(ops: Iterable[ClientOp], path: str) -> None:
    with open(path, "w") as fh:
        for op in ops:
            fh.write(op.to_json() + "\n")


def load_history(path: str) -> list[ClientOp]:
    with open(path) as fh:
        return [ClientOp.from_json(line) for line in fh if line.strip()]


@dataclass(frozen=True, slots=True)
class TraceRecord:
    sequence_number: int
    item_key: str
    address: int
    kind: OpType = OpType.READ
    value: Optional[bytes] = None


class TraceFormatError(ValueError):
    pass


def keyed_payload(key: str, seq: int, element_size: int, seed: int = 0) -> bytes:
    """Deterministic write payload for trace row ``(key, seq)``."""
    h = hashlib.shake_128(seed.to_bytes(8, "little") + f"{key}\x00{seq}".encode())
    return h.digest(element_size)


def ingest_csv_trace(path: str, element_size: int = 1024, seed: int = 0) -> list[TraceRecord]:
    """Read ``seq,key[,kind]`` rows; keys get dense addresses by first appearance."""
    addresses: dict[str, int] = {}
    records: list[TraceRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError(f"{path}: empty trace file")
        cols = [h.strip().lower() for h in header]
        if cols[:2] != ["seq", "key"] or len(cols) > 3 or (len(cols) == 3 and cols[2] != "kind"):
            raise TraceFormatError(f"{path}:1: header must be seq,key[,kind]")
        last_seq: Optional[int] = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) not in (2, 3) or len(row) > len(cols):
                raise TraceFormatError(f"{path}:{lineno}: expected {len(cols)} columns")
            try:
                seq = int(row[0])
            except ValueError:
                raise TraceFormatError(f"{path}:{lineno}: bad sequence number {row[0]!r}") from None
            if last_seq is not None and seq <= last_seq:
                raise TraceFormatError(f"{path}:{lineno}: sequence numbers must increase")
            last_seq = seq
            key = row[1].strip()
            if not key:
                raise TraceFormatError(f"{path}:{lineno}: empty key")
            flag = row[2].strip().upper() if len(row) == 3 else "R"
            if flag in ("R", "READ", ""):
                kind, value = OpType.READ, None
            elif flag in ("W", "WRITE"):
                kind, value = OpType.WRITE, keyed_payload(key, seq, element_size, seed)
            else:
                raise TraceFormatError(f"{path}:{lineno}: kind must be R or W, got {row[2]!r}")
            address = addresses.setdefault(key, len(addresses))
            records.append(TraceRecord(seq, key, address, kind, value))
    if not records:
        raise TraceFormatError(f"{path}: trace has no records")
    return records


def zipf_cdf(n: int, s: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    weights = ranks ** -s
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return cdf


def gen_temporal_zipf_trace(n: int, length: int, s: float, seed: int = 0) -> list[int]:
    """Trace whose stack distances follow a Zipf law truncated to ``[1, n]``.

    A most-recently-used list of all ``n`` addresses starts as a seeded
    random permutation.  Each step draws a rank ``v`` and emits (and moves
    to the front) the ``v``-th most recently used address.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if s < 0:
        raise ValueError("s must be >= 0")
    rng = np.random.default_rng(seed)
    cdf = zipf_cdf(n, s)
    ranks = np.minimum(np.searchsorted(cdf, rng.random(length), side="right"), n - 1)
    mru = rng.permutation(n).tolist()
    out = [0] * length
    for i, v in enumerate(ranks.tolist()):
        x = mru[v]
        if v:
            del mru[v]
            mru.insert(0, x)
        out[i] = x
    return out


def unique_value(op_id: int, element_size: int) -> bytes:
    """Write payload that embeds the op id, so every write value is distinct."""
    head = op_id.to_bytes(8, "little")
    return head + bytes(element_size - 8) if element_size >= 8 else head[:element_size]


def make_ops(
    addresses: Sequence[int],
    mix: float,
    element_size: int,
    seed: int = 0,
    start_id: int = 1,
) -> list[ClientOp]:
    """Turn an address trace into ops; each op is a WRITE with probability ``mix``."""
    rng = random.Random(seed)
    ops = []
    for i, a in enumerate(addresses):
        op_id = start_id + i
        if rng.random() < mix:
            ops.append(ClientOp(op_id, OpType.WRITE, a, unique_value(op_id, element_size)))
        else:
            ops.append(ClientOp(op_id, OpType.READ, a))
    return ops


def ops_from_records(records: Sequence[TraceRecord], start_id: int = 1) -> list[ClientOp]:
    return [ClientOp(start_id + i, r.kind, r.address, r.value) for i, r in enumerate(records)]


def parse_synthetic(text: str) -> dict:
    """Parse ``s=<f>,n=<N>,len=<L>`` into keyword arguments."""
    out: dict = {}
    for part in text.split(","):
        key, _, val = part.partition("=")
        key = key.strip()
        if key == "s":
            out["s"] = float(val)
        elif key in ("n", "len", "seed"):
            out["length" if key == "len" else key] = int(float(val))
        else:
            raise ValueError(f"unknown synthetic parameter {key!r}")
    missing = {"s", "n", "length"} - set(out)
    if missing:
        raise ValueError(f"synthetic workload is missing {sorted(missing)}")
    return out


def split_round_robin(ops: Sequence[ClientOp], clients: int) -> list[list[ClientOp]]:
    lanes: list[list[ClientOp]] = [[] for _ in range(clients)]
    for i, op in enumerate(ops):
        op.client = i % clients
        lanes[op.client].append(op)
    return lanes


def iter_chunks(seq: Sequence, size: int) -> Iterator[Sequence]:
    for i in range(0, len(seq), size):
        yield seq[i:i + size]
