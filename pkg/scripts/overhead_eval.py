"""Configuration overhead on the bench programs.

Prints the bench table, the least-squares fit of config instructions
against calls and protects, and an optional sweep of strcpy_micro over
the number of calls.

    python scripts/overhead_eval.py [--sweep 10,100,1000] [-o overhead.json]
"""

import argparse
import json
import sys

from pulpsim.corpus import harness


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--manifest", default=str(harness.DEFAULT_BENCH))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--sweep", default="", help="comma separated CALLS values for strcpy_micro")
    ap.add_argument("-o", "--output")
    args = ap.parse_args(argv)

    results = harness.run_benches(harness.load_bench(args.manifest), jobs=args.jobs)
    report = harness.overhead_report(results)
    print(harness.bench_table(report))
    fit = report["fit"]
    if fit:
        print(f"\nfit over {fit['points']} runs: config = {fit['per_call']:.3f}*calls + "
              f"{fit['per_protect']:.3f}*protects + {fit['intercept']:.3f} "
              f"(max residual {fit['max_residual']:.2e})")

    if args.sweep:
        src = harness.HERE / "programs" / "strcpy_micro.s"
        specs = [harness.BenchSpec(f"strcpy_micro_c{n}", src, {"CALLS": int(n)})
                 for n in args.sweep.split(",")]
        sweep = harness.run_benches(specs, jobs=args.jobs)
        print("\nstrcpy_micro sweep")
        for r in sorted(sweep, key=lambda r: r.calls):
            print(f"  calls={r.calls:>6}  retired={r.instructions:>9}  config={r.config_instructions:>7}  "
                  f"ratio={r.ratio:.5f}")
        report["sweep"] = [r.to_dict() for r in sweep]

    if args.output:
        with open(args.output, "w") as f:
            json.dump(report, f, indent=2)
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
