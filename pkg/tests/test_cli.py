import json
import random

import pytest

from cloak.bench import Harness, make_engine, BenchConfig, build_ops
from cloak.cli import build_parser, main
from cloak.core import BudgetSchedule, OpType
from cloak.workload import ClientOp, save_history


def test_plan_json(capsys):
    assert main(["plan", "--n", "100", "--first-budget", "10"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["budgets"] == [10, 5, 4, 3, 2, 2, 2, 2, 2]
    assert doc["capacity"] == 114 and doc["batch_size"] == 32


def test_plan_from_trace(tmp_path, capsys):
    p = tmp_path / "t.csv"
    rng = random.Random(1)
    keys = list("abcdefghij") + [rng.choice("abcdefghij") for _ in range(400)]
    p.write_text("seq,key\n" + "".join(f"{i},{k}\n" for i, k in enumerate(keys)))
    assert main(["plan", "--trace", str(p), "--first-budget", "4"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["budgets"] == [4, 2, 2]
    assert doc["fitted_exponent"] is not None


def test_audit_command(tmp_path):
    schedule = BudgetSchedule((4, 2, 2))
    cfg = BenchConfig(n=14, length=1000, cache_size=2, element_size=16)
    engine = make_engine(cfg, schedule, rng=random.Random(0))
    h = Harness(engine)
    h.run(build_ops(cfg), rate=100.0, max_batches=300)
    log = tmp_path / "log.jsonl"
    h.store.flush_log(str(log))
    budgets = tmp_path / "b.json"
    budgets.write_text(json.dumps([4, 2, 2]))
    out = tmp_path / "r.json"
    rc = main(["audit", "--log", str(log), "--budgets", str(budgets), "--clock", "sim",
               "--interval-ms", "20", "--out", str(out)])
    report = json.loads(out.read_text())
    assert rc == 0 and report["ok"] and report["composition_ok"]


def test_lincheck_command(tmp_path, capsys):
    h = tmp_path / "h.jsonl"
    save_history([ClientOp(1, OpType.WRITE, 0, b"\x01", 0, 0.0, 1.0),
                  ClientOp(2, OpType.READ, 0, None, 0, 2.0, 3.0, b"\x00")], str(h))
    assert main(["lincheck", "--history", str(h)]) == 1
    assert json.loads(capsys.readouterr().out)["ok"] is False


def test_bench_command(tmp_path):
    cfg = tmp_path / "b.toml"
    cfg.write_text('[bench]\nn = 500\nfirst_budget = 8\nlength = 2000\nelement_size = 32\n')
    out = tmp_path / "m.json"
    assert main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
    m = json.loads(out.read_text())
    assert m["ops"] == 2000 and {"throughput", "mean_latency", "batch_utilization"} <= set(m)


def test_parser_rejects_bad_address():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["client", "--proxy", "nohostport", "--synthetic", "s=1,n=2,len=3"])
