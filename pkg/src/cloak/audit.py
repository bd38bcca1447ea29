"""Obliviousness audit over the storage server's view, and the TRACE-IND game.

The auditor sees only the public schedule and the adversary log.  It
rebuilds the reuse-distance sets at the slot level: a slot's distance at
batch ``j`` is ``j`` minus the index of the batch that last touched it,
clamped to the schedule depth.  Slots the log has not yet touched belong to
sets the auditor cannot see, so composition checks start once every slot
has appeared (after ``depth`` batches for a compliant proxy).
"""

from __future__ import annotations

import copy
import json
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from cloak.core import BudgetSchedule, OpType
from cloak.storage import BatchLogEntry
from cloak.workload import ClientOp

P_THRESHOLD = 0.01
PASS_FRACTION = 0.95
BINS = 10


class InsufficientBatchesError(ValueError):
    pass


@dataclass
class AuditReport:
    batches_checked: int
    cadence_ok: bool
    size_ok: bool
    composition_ok: bool
    read_equals_write_ok: bool
    ciphertext_fresh_ok: bool
    distinct_ok: bool
    uniformity_p_values: list[float]
    pairwise_distance_stats: dict = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def deterministic_ok(self) -> bool:
        return (self.cadence_ok and self.size_ok and self.composition_ok
                and self.read_equals_write_ok and self.ciphertext_fresh_ok and self.distinct_ok)

    @property
    def uniformity_pass_fraction(self) -> float:
        ps = [p for p in self.uniformity_p_values if not math.isnan(p)]
        return sum(p > P_THRESHOLD for p in ps) / len(ps) if ps else 0.0

    @property
    def uniformity_ok(self) -> bool:
        return self.uniformity_pass_fraction >= PASS_FRACTION

    @property
    def ok(self) -> bool:
        return self.deterministic_ok and self.uniformity_ok

    def to_dict(self) -> dict:
        return {
            "batches_checked": self.batches_checked,
            "cadence_ok": self.cadence_ok,
            "size_ok": self.size_ok,
            "composition_ok": self.composition_ok,
            "read_equals_write_ok": self.read_equals_write_ok,
            "ciphertext_fresh_ok": self.ciphertext_fresh_ok,
            "distinct_ok": self.distinct_ok,
            "uniformity_p_values": self.uniformity_p_values,
            "uniformity_pass_fraction": self.uniformity_pass_fraction,
            "pairwise_distance_stats": self.pairwise_distance_stats,
            "failures": self.failures[:20],
            "ok": self.ok,
        }


@dataclass
class Observation:
    """What the auditor extracts from one log, batch by batch."""

    sizes: list[int]
    # per post-warm-up batch, draws per distance 1..T (None before warm-up)
    draws: list[Optional[list[int]]]
    gaps: list[float]
    # per set, binned position of each drawn slot inside its source batch
    position_counts: np.ndarray
    failures: list[str]
    flags: dict
    # expected share of each bin under uniform slot choice
    bin_shares: Optional[np.ndarray] = None

    def deterministic_bytes(self) -> bytes:
        """Canonical encoding of the observables fixed by the protocol."""
        return json.dumps({"sizes": self.sizes, "draws": self.draws,
                           "gaps": [round(g, 9) for g in self.gaps]}).encode()


def observe(log: Sequence[BatchLogEntry], schedule: BudgetSchedule, warmup,
            interval: Optional[float] = None, clock: str = "sim") -> Observation:
    T = schedule.depth
    budgets = list(schedule.budgets)
    B = schedule.batch_size
    warm = T if warmup in (None, "auto") else int(warmup)
    failures: list[str] = []
    size_ok = distinct_ok = rw_ok = comp_ok = fresh_ok = cadence_ok = True

    last_seen: dict[int, int] = {}
    # slot -> (batch index, position, batch length) of the write that placed it
    placed: dict[int, tuple[int, int, int]] = {}
    seen_blocks: set[bytes] = set()
    sizes: list[int] = []
    draws_out: list[Optional[list[int]]] = []
    bins = max(1, min(BINS, B))
    counts = np.zeros((T, bins), dtype=np.int64)

    for j, entry in enumerate(log):
        reads = entry.read_addresses
        sizes.append(len(reads))
        if len(reads) != B:
            size_ok = False
            failures.append(f"batch {j}: size {len(reads)} != {B}")
        if len(set(reads)) != len(reads):
            distinct_ok = False
            failures.append(f"batch {j}: duplicate address")
        written = [a for a, _ in entry.written]
        if sorted(written) != sorted(reads):
            rw_ok = False
            failures.append(f"batch {j}: written slots differ from read slots")
        for _, block in entry.written:
            raw = block.to_bytes()
            # a repeated nonce alone would already break GCM
            for part in (raw, b"n" + block.nonce):
                if part in seen_blocks:
                    fresh_ok = False
                    failures.append(f"batch {j}: repeated ciphertext")
                seen_blocks.add(part)

        if j >= warm:
            per_set = [0] * T
            unknown = 0
            for slot in set(reads):
                if slot not in last_seen:
                    unknown += 1
                    continue
                t = min(j - last_seen[slot], T)
                per_set[t - 1] += 1
                src = placed.get(slot)
                if src is not None:
                    _, pos, length = src
                    counts[t - 1, min(bins - 1, pos * bins // length)] += 1
            if unknown or per_set != budgets:
                comp_ok = False
                failures.append(f"batch {j}: per-set draws {per_set} (unseen {unknown}) != {budgets}")
            draws_out.append(per_set)
        else:
            draws_out.append(None)

        for slot in reads:
            last_seen[slot] = j
        for pos, slot in enumerate(written):
            placed[slot] = (j, pos, len(written))

    times = [e.receive_time for e in log]
    gaps = [b - a for a, b in zip(times, times[1:])]
    if interval is None and gaps:
        interval = float(np.median(gaps))
    if gaps and interval:
        if clock == "sim":
            bad = [i for i, g in enumerate(gaps) if abs(g - interval) > 1e-6 * interval]
        else:
            bad = [i for i, g in enumerate(gaps) if abs(g - interval) > 0.25 * interval]
            if abs(sum(gaps) / len(gaps) - interval) > 0.01 * interval:
                bad.append(-1)
        if bad:
            cadence_ok = False
            failures.append(f"cadence off at {len(bad)} gaps (first {bad[0]})")
    # the log must also be contiguous
    idx = [e.batch_index for e in log]
    if idx != list(range(idx[0], idx[0] + len(idx))) if idx else False:
        cadence_ok = False
        failures.append("batch indices are not contiguous")

    flags = dict(size_ok=size_ok, distinct_ok=distinct_ok, read_equals_write_ok=rw_ok,
                 composition_ok=comp_ok, ciphertext_fresh_ok=fresh_ok, cadence_ok=cadence_ok)
    # bins cover unequal numbers of positions unless B is a multiple of bins
    shares = np.bincount([p * bins // B for p in range(B)], minlength=bins) / B
    return Observation(sizes, draws_out, gaps, counts, failures, flags, shares)


def uniformity_p_values(counts: np.ndarray, shares: Optional[np.ndarray] = None) -> list[float]:
    """Chi-square goodness of fit per set; NaN where a set has too few draws."""
    out = []
    k = counts.shape[1]
    shares = np.full(k, 1.0 / k) if shares is None else shares
    for row in counts:
        n = int(row.sum())
        if k < 2 or n * shares.min() < 5:
            out.append(float("nan"))
            continue
        out.append(float(stats.chisquare(row, n * shares).pvalue))
    return out


def audit_obliviousness(
    log: Sequence[BatchLogEntry],
    schedule: BudgetSchedule,
    warmup="auto",
    *,
    interval: Optional[float] = None,
    clock: str = "sim",
    min_batches: int = 100,
) -> AuditReport:
    """Check a log against the schedule using nothing but the log itself."""
    warm = schedule.depth if warmup in (None, "auto") else int(warmup)
    if len(log) <= warm + min_batches:
        raise InsufficientBatchesError(
            f"need more than {warm + min_batches} batches, log has {len(log)}"
        )
    obs = observe(log, schedule, warm, interval, clock)
    return AuditReport(
        batches_checked=len(log) - warm,
        uniformity_p_values=uniformity_p_values(obs.position_counts, obs.bin_shares),
        failures=obs.failures,
        **obs.flags,
    )


FAULTS = ("composition", "size", "cadence", "freshness", "duplicate")


def inject_fault(log: Sequence[BatchLogEntry], kind: str, at: int,
                 interval: float = 0.020) -> list[BatchLogEntry]:
    """Copy of ``log`` with one fault of class ``kind`` planted in batch ``at``."""
    if kind not in FAULTS:
        raise ValueError(f"unknown fault {kind!r}; expected one of {FAULTS}")
    out = [copy.copy(e) for e in log]
    e = out[at]
    e.read_addresses = list(e.read_addresses)
    e.written = list(e.written)
    if kind == "composition":
        # swap a deeper slot for one more slot from the previous batch (set 1)
        prev = set(out[at - 1].read_addresses)
        extra = next(a for a in out[at - 1].read_addresses if a not in set(e.read_addresses))
        victim = next(i for i, a in enumerate(e.read_addresses) if a not in prev)
        old = e.read_addresses[victim]
        e.read_addresses[victim] = extra
        e.written = [(extra if a == old else a, b) for a, b in e.written]
    elif kind == "size":
        dropped = e.read_addresses.pop()
        e.written = [(a, b) for a, b in e.written if a != dropped]
    elif kind == "duplicate":
        e.read_addresses[1] = e.read_addresses[0]
        e.written[1] = (e.written[0][0], e.written[1][1])
    elif kind == "freshness":
        e.written[0] = (e.written[0][0], out[at - 1].written[0][1])
    else:
        e.receive_time += 0.5 * interval
    return out


# -- TRACE-IND -----------------------------------------------------------------


@dataclass
class TraceIndReport:
    observables_identical: bool
    set_p_values: list[float]
    reports: tuple[AuditReport, AuditReport]
    batches: int

    @property
    def indistinguishable(self) -> bool:
        ps = [p for p in self.set_p_values if not math.isnan(p)]
        return self.observables_identical and all(p > P_THRESHOLD for p in ps)

    def to_dict(self) -> dict:
        return {
            "observables_identical": self.observables_identical,
            "set_p_values": self.set_p_values,
            "batches": self.batches,
            "indistinguishable": self.indistinguishable,
            "audit": [r.to_dict() for r in self.reports],
        }


def two_sample_p_values(a: np.ndarray, b: np.ndarray) -> list[float]:
    out = []
    for ra, rb in zip(a, b):
        table = np.vstack([ra, rb])
        keep = table.sum(axis=0) > 0
        table = table[:, keep]
        if (table.sum(axis=1) == 0).any() or table.shape[1] < 2 or table.sum() < 5 * table.shape[1]:
            out.append(float("nan"))
            continue
        out.append(float(stats.chi2_contingency(table, correction=False).pvalue))
    return out


def hot_key_reads(count: int, address: int = 0) -> list[ClientOp]:
    return [ClientOp(i + 1, OpType.READ, address) for i in range(count)]


def uniform_reads(count: int, n: int, seed: int = 0) -> list[ClientOp]:
    rng = random.Random(seed)
    return [ClientOp(i + 1, OpType.READ, rng.randrange(n)) for i in range(count)]


def trace_ind_experiment(
    q0: Sequence[ClientOp],
    q1: Sequence[ClientOp],
    config,
    *,
    batches: int = 600,
    rate: Optional[float] = None,
    seeds: tuple[int, int] = (1, 2),
    schedule: Optional[BudgetSchedule] = None,
) -> TraceIndReport:
    """Run the sim stack once per sequence and compare what the server saw.

    ``config`` is a :class:`cloak.bench.BenchConfig` (schedule, cache and
    mutant switches).  Both runs last exactly ``batches`` batches and use
    independent seeds.  Ops are issued open loop at ``rate`` so that both
    sequences span the run.  ``schedule`` overrides the one derived from
    ``config``.
    """
    from cloak.bench import Harness, make_engine

    schedule = schedule or config.schedule()
    if rate is None:
        rate = max(len(q0), len(q1)) / (batches * config.batch_interval)
    observations = []
    reports = []
    for ops, seed in zip((q0, q1), seeds):
        ops = [ClientOp(o.id, o.kind, o.address, o.value) for o in ops]
        engine = make_engine(config, schedule, rng=random.Random(seed))
        harness = Harness(engine, clock="sim")
        harness.run(ops, rate=rate, max_batches=batches)
        log = harness.store.adversary_log()
        obs = observe(log, schedule, "auto", config.batch_interval, "sim")
        observations.append(obs)
        reports.append(AuditReport(
            batches_checked=max(0, len(log) - schedule.depth),
            uniformity_p_values=uniformity_p_values(obs.position_counts, obs.bin_shares),
            failures=obs.failures,
            **obs.flags,
        ))
    same = observations[0].deterministic_bytes() == observations[1].deterministic_bytes()
    p = two_sample_p_values(observations[0].position_counts, observations[1].position_counts)
    for r in reports:
        r.pairwise_distance_stats = {"two_sample_p_values": p}
    return TraceIndReport(same, p, (reports[0], reports[1]), batches)
