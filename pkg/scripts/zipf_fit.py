"""Generate temporal-Zipf traces and fit the exponent back from their access-gap histograms."""

import argparse
import json

from cloak.planner import fit_zipf, temporal_histogram
from cloak.workload import gen_temporal_zipf_trace


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--skews", default="0.5,1.0,1.2,1.5,2.0")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--length", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=9)
    args = p.parse_args()
    for s in (float(x) for x in args.skews.split(",")):
        hist = temporal_histogram(gen_temporal_zipf_trace(args.n, args.length, s, args.seed))
        fit = fit_zipf(hist)
        # for s > 1 an access gap grows like (stack distance)**s, so the gap histogram decays as 2 - 1/s
        predicted = s if s <= 1 else 2 - 1 / s
        print(json.dumps({"s": s, "fit": round(fit.exponent, 4), "gap_law": round(predicted, 4),
                          "bins": fit.bins, "distinct": hist.distinct}), flush=True)


if __name__ == "__main__":
    main()
