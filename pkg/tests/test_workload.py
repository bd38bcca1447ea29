from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from cloak.core import OpType
from cloak.planner import temporal_histogram
from cloak.workload import (
    ClientOp,
    TraceFormatError,
    gen_temporal_zipf_trace,
    ingest_csv_trace,
    keyed_payload,
    load_history,
    make_ops,
    parse_synthetic,
    save_history,
    split_round_robin,
    unique_value,
)


def test_high_skew_repeats_one_address():
    trace = gen_temporal_zipf_trace(1000, 2000, 20.0, seed=1)
    assert Counter(trace[1:]).most_common(1)[0][1] >= 0.99 * 1999


def test_generator_is_seeded():
    assert gen_temporal_zipf_trace(100, 500, 1.0, 3) == gen_temporal_zipf_trace(100, 500, 1.0, 3)
    assert gen_temporal_zipf_trace(100, 500, 1.0, 3) != gen_temporal_zipf_trace(100, 500, 1.0, 4)


def test_generator_validates():
    with pytest.raises(ValueError):
        gen_temporal_zipf_trace(0, 10, 1.0)
    with pytest.raises(ValueError):
        gen_temporal_zipf_trace(10, 10, -0.1)


def test_uniform_generator_is_stationary():
    n = 200
    trace = gen_temporal_zipf_trace(n, 100_000, 0.0, seed=2)
    counts = np.bincount(trace, minlength=n)
    assert stats.chisquare(counts).pvalue > 0.01


def test_uniform_ranks_give_flat_rank_histogram():
    """Under s=0 each emitted item's MRU rank is uniform over [1, n]."""
    n = 100
    trace = gen_temporal_zipf_trace(n, 50_000, 0.0, seed=8)
    mru = list(dict.fromkeys(reversed(trace[:5000])))  # reconstruct order after warm-up
    ranks = []
    for a in trace[5000:]:
        if a in mru:
            r = mru.index(a)
            ranks.append(r)
            mru.insert(0, mru.pop(r))
        else:
            mru.insert(0, a)
    counts = np.bincount(ranks, minlength=n)[:n]
    assert stats.chisquare(counts).pvalue > 0.01


def test_stack_distance_matches_rank_for_hot_trace():
    trace = gen_temporal_zipf_trace(50, 20_000, 1.0, seed=0)
    h = temporal_histogram(trace)
    assert h.total() == len(trace) - len(set(trace))


def write_csv(tmp_path, text):
    p = tmp_path / "t.csv"
    p.write_text(text)
    return str(p)


def test_ingest_dense_addresses(tmp_path):
    recs = ingest_csv_trace(write_csv(tmp_path, "seq,key\n1,a\n2,b\n3,a\n"))
    assert [r.address for r in recs] == [0, 1, 0]
    assert all(r.kind is OpType.READ for r in recs)


def test_ingest_write_payload(tmp_path):
    recs = ingest_csv_trace(write_csv(tmp_path, "seq,key,kind\n1,a,W\n2,a,R\n"), 32, seed=5)
    assert recs[0].kind is OpType.WRITE
    assert recs[0].value == keyed_payload("a", 1, 32, 5)
    assert recs[1].value is None


def test_ingest_is_stable(tmp_path):
    path = write_csv(tmp_path, "seq,key\n1,x\n2,y\n5,z\n9,x\n")
    assert ingest_csv_trace(path) == ingest_csv_trace(path)


@pytest.mark.parametrize("text,line", [
    ("", None),
    ("seq,key\n", None),
    ("seq,key\n1,a\nzz,b\n", 3),
    ("seq,key\n2,a\n1,b\n", 3),
    ("seq,key,kind\n1,a,X\n", 2),
    ("foo,bar\n1,a\n", 1),
])
def test_ingest_errors(tmp_path, text, line):
    with pytest.raises(TraceFormatError) as info:
        ingest_csv_trace(write_csv(tmp_path, text))
    if line is not None:
        assert f":{line}:" in str(info.value)


def test_mix_fraction():
    ops = make_ops(list(range(100_000)), 0.5, 16, seed=3)
    frac = sum(o.kind is OpType.WRITE for o in ops) / len(ops)
    assert abs(frac - 0.5) <= 0.01
    writes = [o.value for o in ops if o.kind is OpType.WRITE]
    assert len(set(writes)) == len(writes)


def test_unique_value_embeds_id():
    assert unique_value(5, 16)[:8] == (5).to_bytes(8, "little")
    assert len(unique_value(5, 4)) == 4


def test_parse_synthetic():
    assert parse_synthetic("s=1.0,n=1e4,len=100") == {"s": 1.0, "n": 10_000, "length": 100}
    with pytest.raises(ValueError):
        parse_synthetic("s=1.0")
    with pytest.raises(ValueError):
        parse_synthetic("s=1,n=2,len=3,q=1")


@given(st.lists(st.integers(0, 9), max_size=40), st.integers(1, 5))
def test_round_robin_preserves_order(addrs, k):
    ops = [ClientOp(i, OpType.READ, a) for i, a in enumerate(addrs)]
    lanes = split_round_robin(ops, k)
    assert sorted(o.id for lane in lanes for o in lane) == list(range(len(addrs)))
    for lane in lanes:
        assert [o.id for o in lane] == sorted(o.id for o in lane)


def test_history_round_trip(tmp_path):
    ops = [ClientOp(1, OpType.WRITE, 3, b"\x01\x02", 0, 0.5, 0.75),
           ClientOp(2, OpType.READ, 3, None, 1, 0.6, 0.9, b"\x01\x02")]
    path = str(tmp_path / "h.jsonl")
    save_history(ops, path)
    assert load_history(path) == ops
