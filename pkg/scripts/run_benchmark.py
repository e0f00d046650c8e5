"""Run the simulation benchmark for every scenario and print a results table.

Usage: python scripts/run_benchmark.py --trials 100 --repeats 10 --jobs 4
"""
import argparse
import json
import time
import warnings

from eventseg import evaluation, flda, simgen


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", default="stable,unstable++,unstable+-")
    ap.add_argument("--methods", default="hmm,dhmm,proposed")
    ap.add_argument("--trials", type=int, default=100, help="training realizations")
    ap.add_argument("--repeats", type=int, default=10, help="held-out realizations per training one")
    ap.add_argument("--protocol", default="out-of-sample", choices=["in-sample", "out-of-sample"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--json", help="write all reports to this file")
    args = ap.parse_args()

    methods = args.methods.split(",")
    configs = simgen.default_configs()
    out = {}
    for scenario in args.scenarios.split(","):
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", flda.CarryForwardWarning)
            rep = evaluation.run_benchmark(configs[scenario], methods, args.trials, args.repeats,
                                           args.protocol, args.seed, args.jobs)
        secs = time.perf_counter() - t0
        print(f"\n{scenario} ({args.protocol}, {rep.reports[methods[0]].n_trials} trials, {secs:.0f}s)")
        print(f"{'method':10s}" + "".join(f"{m:>14s}" for m in evaluation.METRICS))
        for m, r in rep.reports.items():
            print(f"{m:10s}" + "".join(f"{r.mean(k):14.4f}" for k in evaluation.METRICS))
        for pair, ps in rep.pvalues.items():
            print(f"{pair:10s}" + "".join(f"{ps.get(k, float('nan')):14.2e}" for k in evaluation.METRICS))
        out[scenario] = rep.to_dict()
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(out, fh, indent=2)


if __name__ == "__main__":
    main()
