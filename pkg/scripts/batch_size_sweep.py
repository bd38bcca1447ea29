"""Throughput against batch size at a fixed open-loop offered load (real clock)."""

import argparse
import json

from cloak.bench import BenchConfig, run_harness


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", default="150,300,600,1200,2400,4800,9600")
    p.add_argument("--rate", type=float, default=30_000)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--element-size", type=int, default=1024)
    args = p.parse_args()
    for b in (int(x) for x in args.sizes.split(",")):
        cfg = BenchConfig(mode="realtime", n=args.n, s=args.s, batch_size=b, rate=args.rate,
                          duration=args.duration, length=int(args.rate * args.duration),
                          element_size=args.element_size, seed=1)
        m, _, _ = run_harness(cfg)
        print(json.dumps({"target_batch_size": b, "batch_size": m.extra["batch_size"],
                          "throughput": round(m.throughput), "mean_latency_ms": round(m.mean_latency, 2),
                          "utilization": round(m.batch_utilization, 4)}), flush=True)


if __name__ == "__main__":
    main()
