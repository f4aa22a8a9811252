"""Run the security corpus with and without checks and print the outcome table.

    python scripts/security_eval.py [--audit] [--jobs N] [-o results.json]
"""

import argparse
import json
import sys

from pulpsim.corpus import harness


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--manifest", default=str(harness.DEFAULT_MANIFEST))
    ap.add_argument("--audit", action="store_true", help="trace and audit every run (slow for the benches)")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--group", action="append", help="only cases of this group (repeatable)")
    ap.add_argument("-o", "--output")
    args = ap.parse_args(argv)

    specs = harness.load_manifest(args.manifest)
    if args.group:
        specs = [s for s in specs if s.group in args.group]
    reports = harness.run_cases(specs, jobs=args.jobs, trace=args.audit)
    print(harness.case_table(reports))

    by = {(r.name, r.pulp_enabled): r for r in reports}
    stopped = sum(by[(s.name, True)].passed and by[(s.name, True)].outcome["kind"] == "trapped"
                  for s in specs if s.group in ("security", "rop"))
    attacks = sum(s.group in ("security", "rop") for s in specs)
    print(f"\nattacks stopped with checks: {stopped}/{attacks}")
    if args.output:
        with open(args.output, "w") as f:
            json.dump([r.to_dict() for r in reports], f, indent=2)
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
