"""Cloak against the unsafe baseline over loopback TCP, in alternating pairs."""

import argparse
import asyncio
import json
import statistics

from cloak.bench import BenchConfig, run_tcp


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--pairs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=400)
    p.add_argument("--length", type=int, default=50_000)
    p.add_argument("--clients", type=int, default=4)
    p.add_argument("--window", type=int, default=256)
    args = p.parse_args()
    ratios = []
    for rep in range(args.pairs):
        thr = {}
        for system in ("unsafe", "cloak"):
            cfg = BenchConfig(mode="tcp", system=system, n=10_000, s=1.0, batch_size=args.batch_size,
                              length=args.length, element_size=1024, clients=args.clients,
                              window=args.window, seed=1 + rep)
            m, _ = asyncio.run(run_tcp(cfg))
            thr[system] = m.throughput
        ratios.append(thr["cloak"] / thr["unsafe"])
        print(json.dumps({"pair": rep, "unsafe": round(thr["unsafe"]), "cloak": round(thr["cloak"]),
                          "ratio": round(ratios[-1], 3)}), flush=True)
    print(json.dumps({"median_ratio": round(statistics.median(ratios), 3)}))


if __name__ == "__main__":
    main()
