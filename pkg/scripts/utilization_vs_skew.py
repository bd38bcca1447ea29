"""Steady-state batch utilization against workload skew (sim clock, saturating closed loop)."""

import argparse
import json

from cloak.bench import BenchConfig, run_harness


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--batch-size", type=int, default=400)
    p.add_argument("--length", type=int, default=200_000)
    p.add_argument("--skews", default="0,0.5,1.0,1.5")
    p.add_argument("--cache", type=int, default=1000)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args()
    for s in (float(x) for x in args.skews.split(",")):
        cfg = BenchConfig(mode="sim", n=args.n, s=s, batch_size=args.batch_size, length=args.length,
                          cache_size=args.cache, element_size=32, seed=args.seed)
        m, _, _ = run_harness(cfg)
        print(json.dumps({"s": s, "n": args.n, "batch_size": m.extra["batch_size"],
                          "depth": len(m.extra["budgets"]),
                          "steady_utilization": round(m.extra["steady_utilization"], 4),
                          "mean_utilization": round(m.batch_utilization, 4),
                          "batches": m.batches}), flush=True)


if __name__ == "__main__":
    main()
