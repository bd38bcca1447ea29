"""Command-line entry point: ``cloak <subcommand> ...``."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import random
import sys
import time
from typing import Optional, Sequence

log = logging.getLogger("cloak")


def _addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _emit(doc: dict, out: Optional[str]) -> None:
    text = json.dumps(doc, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


# -- subcommands ------------------------------------------------------------------


def cmd_plan(args) -> int:
    from cloak.planner import schedule_for_trace, set_budgets
    from cloak.workload import ingest_csv_trace

    if args.trace:
        trace = [r.address for r in ingest_csv_trace(args.trace)]
        plan = schedule_for_trace(trace, args.first_budget)
        doc = plan.to_dict()
    else:
        if args.n is None:
            raise SystemExit("plan needs --n or --trace")
        doc = set_budgets(args.n, args.first_budget).to_dict()
        doc.update(fitted_exponent=None, residual=None)
    _emit(doc, args.out)
    return 0


async def _serve_storage(args) -> None:
    from cloak.server import StorageServer

    fh = open(args.log, "w") if args.log else None
    server = StorageServer(args.capacity, args.element_size, log_file=fh, keep_log=False)
    host, port = await server.start(*args.listen)
    log.info("storage server on %s:%d (capacity %d)", host, port, args.capacity)
    try:
        await server.serve_forever()
    finally:
        if fh:
            fh.close()


def cmd_server(args) -> int:
    asyncio.run(_serve_storage(args))
    return 0


async def _serve_proxy(args) -> None:
    from cloak.crypto import BlockCipher, generate_key
    from cloak.planner import set_budgets
    from cloak.proxy.engine import ProxyConfig, ProxyEngine
    from cloak.proxy.service import ProxyService, json_line_sink
    from cloak.server import RemoteStore

    schedule = set_budgets(args.n, args.first_budget)
    queue = None if args.queue_capacity == "auto" else int(args.queue_capacity)
    config = ProxyConfig(
        element_size=args.element_size,
        batch_interval=args.batch_interval_ms / 1000.0,
        cache_size=args.cache,
        queue_capacity=queue,
    )
    engine = ProxyEngine(schedule, BlockCipher(generate_key(), args.element_size), n=args.n,
                         config=config, rng=random.Random(args.seed))
    remote = RemoteStore(*args.server, args.element_size)
    service = ProxyService(engine, remote, clock=args.clock, stats_sink=json_line_sink(sys.stdout))
    host, port = await service.start(*args.listen)
    log.info("proxy on %s:%d, batch size %d, depth %d", host, port,
             schedule.batch_size, schedule.depth)
    print(json.dumps({"config": {"n": args.n, "budgets": list(schedule.budgets),
                                 "batch_size": schedule.batch_size,
                                 "capacity": schedule.capacity,
                                 "batch_interval_ms": args.batch_interval_ms,
                                 "cache": args.cache, "queue_capacity": engine.queue_capacity,
                                 "element_size": args.element_size, "clock": args.clock}}),
          flush=True)
    try:
        await asyncio.Event().wait()
    finally:
        await service.stop()


def cmd_proxy(args) -> int:
    asyncio.run(_serve_proxy(args))
    return 0


async def _run_client(args) -> dict:
    from cloak.bench import summarize
    from cloak.client import CloakClient, replay
    from cloak.workload import (gen_temporal_zipf_trace, ingest_csv_trace, make_ops,
                                ops_from_records, parse_synthetic, save_history,
                                split_round_robin)

    clients = [await CloakClient.connect(*args.proxy) for _ in range(args.connections)]
    es = clients[0].element_size
    if args.trace:
        ops = ops_from_records(ingest_csv_trace(args.trace, es, args.seed))
    else:
        syn = parse_synthetic(args.synthetic)
        addresses = gen_temporal_zipf_trace(syn["n"], syn["length"], syn["s"],
                                            syn.get("seed", args.seed))
        ops = make_ops(addresses, args.mix, es, args.seed)
    t0 = time.monotonic()
    await replay(clients, split_round_robin(ops, len(clients)), rate=args.rate, window=args.window)
    elapsed = time.monotonic() - t0
    for c in clients:
        await c.close()
    if args.history:
        save_history(ops, args.history)
    m = summarize(ops, [], elapsed, 0)
    return {"throughput": m.throughput, "mean_latency": m.mean_latency,
            "p50_latency": m.p50_latency, "p99_latency": m.p99_latency, "ops": m.ops,
            "elapsed": m.elapsed}


def cmd_client(args) -> int:
    if bool(args.trace) == bool(args.synthetic):
        raise SystemExit("client needs exactly one of --trace or --synthetic")
    _emit(asyncio.run(_run_client(args)), args.out)
    return 0


def cmd_audit(args) -> int:
    from cloak.audit import audit_obliviousness
    from cloak.core import BudgetSchedule
    from cloak.storage import load_log

    with open(args.budgets) as fh:
        doc = json.load(fh)
    budgets = doc["budgets"] if isinstance(doc, dict) else doc
    warmup = "auto" if args.warmup == "auto" else int(args.warmup)
    report = audit_obliviousness(load_log(args.log), BudgetSchedule(tuple(budgets)), warmup,
                                 interval=args.interval_ms / 1000.0 if args.interval_ms else None,
                                 clock=args.clock)
    _emit(report.to_dict(), args.out)
    return 0 if report.ok else 1


def cmd_bench(args) -> int:
    import tomli

    from cloak.bench import BenchConfig, run_benchmark

    with open(args.config, "rb") as fh:
        cfg = BenchConfig.from_dict(tomli.load(fh))
    _emit(run_benchmark(cfg).to_dict(), args.out)
    return 0


def cmd_lincheck(args) -> int:
    from cloak.lincheck import check_linearizability
    from cloak.workload import load_history

    verdict = check_linearizability(load_history(args.history))
    print(json.dumps({"ok": verdict.ok, "address": verdict.address,
                      "ops": list(verdict.ops), "reason": verdict.reason}))
    return 0 if verdict.ok else 1


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cloak", description="Oblivious key-value store tools")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", help="print a budget schedule as JSON")
    sp.add_argument("--n", type=int)
    sp.add_argument("--first-budget", type=int, required=True)
    sp.add_argument("--trace", help="CSV trace; sizes the schedule and fits a Zipf exponent")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("server", help="run the storage server")
    sp.add_argument("--listen", type=_addr, default=("127.0.0.1", 7000))
    sp.add_argument("--capacity", type=int, required=True)
    sp.add_argument("--element-size", type=int, default=1024)
    sp.add_argument("--log", help="write the adversary log here (JSON lines)")
    sp.set_defaults(func=cmd_server)

    sp = sub.add_parser("proxy", help="run the trusted proxy")
    sp.add_argument("--listen", type=_addr, default=("127.0.0.1", 7001))
    sp.add_argument("--server", type=_addr, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--first-budget", type=int, required=True)
    sp.add_argument("--batch-interval-ms", type=float, default=20.0)
    sp.add_argument("--cache", type=int, default=1000)
    sp.add_argument("--queue-capacity", default="auto")
    sp.add_argument("--element-size", type=int, default=1024)
    sp.add_argument("--clock", choices=("real", "sim"), default="real")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_proxy)

    sp = sub.add_parser("client", help="replay a workload against a proxy")
    sp.add_argument("--proxy", type=_addr, required=True)
    sp.add_argument("--trace")
    sp.add_argument("--synthetic", help="s=<f>,n=<N>,len=<L>")
    sp.add_argument("--rate", type=float, default=0.0, help="ops/s; 0 is closed loop")
    sp.add_argument("--mix", type=float, default=0.5, help="write fraction")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--connections", type=int, default=1)
    sp.add_argument("--window", type=int, default=256)
    sp.add_argument("--history", help="save the op history (JSON lines) for lincheck")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_client)

    sp = sub.add_parser("audit", help="audit an adversary log")
    sp.add_argument("--log", required=True)
    sp.add_argument("--budgets", required=True, help="JSON file: list or plan output")
    sp.add_argument("--warmup", default="auto")
    sp.add_argument("--clock", choices=("real", "sim"), default="real")
    sp.add_argument("--interval-ms", type=float, help="expected batch interval (median gap if unset)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("bench", help="run a benchmark from a TOML config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("lincheck", help="check a recorded history")
    sp.add_argument("--history", required=True)
    sp.set_defaults(func=cmd_lincheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s",
                        stream=sys.stderr)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
