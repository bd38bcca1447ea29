"""Linearizability checking for per-address read/write register histories.

When every write to an address stores a distinct value, each read names the
write it observed and the check is polynomial: group each write with its
readers into a cluster, compute the cluster's zone from the earliest
response and latest request among its members, and look for overlapping
forward zones or a backward zone swallowed by a forward zone.  Histories
with repeated write values fall back to a memoized search over
linearization orders.
"""

from __future__ import annotations

import bisect
import itertools
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from cloak.core import OpType
from cloak.workload import ClientOp


class IncompleteHistoryError(ValueError):
    pass


@dataclass
class Verdict:
    ok: bool
    address: Optional[int] = None
    ops: tuple[int, ...] = ()
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


PASS = Verdict(True)


def _by_address(history: Iterable[ClientOp]) -> dict[int, list[ClientOp]]:
    groups: dict[int, list[ClientOp]] = defaultdict(list)
    for op in history:
        if op.response_time is None:
            raise IncompleteHistoryError(f"op {op.id} has no response")
        groups[op.address].append(op)
    return groups


def check_linearizability(history: Iterable[ClientOp], initial: Optional[bytes] = None,
                          search_limit: int = 2_000_000) -> Verdict:
    """Check every address independently; returns the first violation found.

    ``initial`` is the value of never-written addresses (all zeros of the
    element size when omitted).
    """
    groups = _by_address(history)
    for address in sorted(groups):
        ops = groups[address]
        init = initial
        if init is None:
            sample = next((o.value for o in ops if o.value is not None),
                          next((o.result for o in ops if o.result is not None), b""))
            init = bytes(len(sample))
        values = [o.value for o in ops if o.kind is OpType.WRITE]
        if len(set(values)) == len(values) and init not in set(values):
            verdict = _check_clusters(address, ops, init)
        else:
            verdict = _check_search(address, ops, init, search_limit)
        if not verdict.ok:
            return verdict
    return PASS


def _check_clusters(address: int, ops: Sequence[ClientOp], initial: bytes) -> Verdict:
    writer_of: dict[bytes, ClientOp] = {o.value: o for o in ops if o.kind is OpType.WRITE}
    NEG = float("-inf")
    # cluster key None is the initial value, written at minus infinity
    members: dict[Optional[int], list[ClientOp]] = {None: []}
    for w in writer_of.values():
        members[w.id] = [w]
    for r in ops:
        if r.kind is not OpType.READ:
            continue
        if r.result == initial:
            members[None].append(r)
            continue
        w = writer_of.get(r.result)
        if w is None:
            return Verdict(False, address, (r.id,), "read returned a value never written")
        if r.response_time < w.issue_time:
            return Verdict(False, address, (w.id, r.id), "read finished before its write began")
        members[w.id].append(r)

    forward: list[tuple[float, float, Optional[int]]] = []
    backward: list[tuple[float, float, Optional[int]]] = []
    for key, group in members.items():
        if key is None:
            if not group:
                continue
            f_min, s_max = NEG, max(o.issue_time for o in group)
        else:
            f_min = min(o.response_time for o in group)
            s_max = max(o.issue_time for o in group)
        if f_min < s_max:
            forward.append((f_min, s_max, key))
        else:
            backward.append((s_max, f_min, key))

    forward.sort(key=lambda z: z[0])
    hi = NEG
    hi_key: Optional[int] = None
    for a, b, k in forward:
        if a < hi:
            return Verdict(False, address, _ids(hi_key, k), "two writes' zones overlap")
        if b > hi:
            hi, hi_key = b, k

    if forward and backward:
        starts = [z[0] for z in forward]
        for c, d, k in backward:
            # the only forward zone that can contain [c, d] starts last before c
            i = bisect.bisect_left(starts, c) - 1
            if i >= 0:
                a, b, fk = forward[i]
                if a < c and d < b:
                    return Verdict(False, address, _ids(fk, k), "a read window sits inside another write's zone")
    return Verdict(True)


def _ids(*keys: Optional[int]) -> tuple[int, ...]:
    return tuple(k for k in keys if k is not None)


def _check_search(address: int, ops: Sequence[ClientOp], initial: bytes, limit: int) -> Verdict:
    """Memoized depth-first search over orders consistent with real time."""
    n = len(ops)
    order = sorted(range(n), key=lambda i: ops[i].issue_time)
    ops = [ops[i] for i in order]
    # pred[i]: bitmask of ops that must precede op i
    pred = [0] * n
    for i, oi in enumerate(ops):
        for j, oj in enumerate(ops):
            if oj.response_time < oi.issue_time:
                pred[i] |= 1 << j
    full = (1 << n) - 1
    seen: set[tuple[int, bytes]] = set()
    stack = [(0, initial)]
    steps = 0
    while stack:
        done, value = stack.pop()
        if done == full:
            return Verdict(True)
        if (done, value) in seen:
            continue
        seen.add((done, value))
        steps += 1
        if steps > limit:
            raise RuntimeError(f"search limit exceeded on address {address}")
        for i in range(n):
            bit = 1 << i
            if done & bit or pred[i] & ~done:
                continue
            op = ops[i]
            if op.kind is OpType.WRITE:
                stack.append((done | bit, op.value))
            elif op.result == value:
                stack.append((done | bit, value))
    return Verdict(False, address, tuple(o.id for o in ops), "no linearization exists")


def brute_force_linearizable(ops: Sequence[ClientOp], initial: bytes) -> bool:
    """Try every permutation of one address's ops (small histories only)."""
    for perm in itertools.permutations(ops):
        pos = {id(o): i for i, o in enumerate(perm)}
        if any(
            a.response_time < b.issue_time and pos[id(a)] > pos[id(b)]
            for a in ops for b in ops
        ):
            continue
        value = initial
        for o in perm:
            if o.kind is OpType.WRITE:
                value = o.value
            elif o.result != value:
                break
        else:
            return True
    return False
