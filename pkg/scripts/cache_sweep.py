"""Mean latency and utilization against proxy cache size at fixed offered load."""

import argparse
import json
import statistics

from cloak.bench import BenchConfig, Harness, build_ops, make_engine


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--base", type=int, default=10)
    p.add_argument("--multipliers", default="1,16,256")
    p.add_argument("--rate", type=float, default=15_000)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--batch-size", type=int, default=400)
    p.add_argument("--clock", choices=("sim", "real"), default="sim")
    args = p.parse_args()
    for mult in (int(x) for x in args.multipliers.split(",")):
        cfg = BenchConfig(n=10_000, s=1.0, batch_size=args.batch_size, rate=args.rate,
                          length=int(args.rate * args.duration), element_size=1024,
                          cache_size=args.base * mult, seed=1)
        ops = build_ops(cfg)
        engine = make_engine(cfg)
        # a one-batch query map, so the cache is what absorbs bursts
        engine.queue_capacity = engine.schedule.batch_size
        harness = Harness(engine, clock=args.clock)
        harness.channel_capacity = engine.queue_capacity
        harness.run(ops, rate=args.rate, duration=args.duration if args.clock == "real" else None)
        done = [o for o in ops if o.response_time is not None]
        print(json.dumps({"cache": cfg.cache_size, "clock": args.clock,
                          "mean_latency_ms": round(statistics.fmean(o.latency for o in done) * 1000, 3),
                          "utilization": round(statistics.fmean(b.utilization for b in engine.batches), 4),
                          "cache_hits": engine.counters.cache_hits}), flush=True)


if __name__ == "__main__":
    main()
