"""Command line: ``pulpsim asm|run|bench|cases|info``.

Exit codes of ``run`` are a stable contract: the program's own exit code
when it exits, otherwise one code per trap class (see EXIT_CODES), 15 for
the step limit and 2 for usage or I/O errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .assembler import AsmError, assemble_file
from .corpus import harness
from .image import ImageError, ProgramImage
from .machine import DEFAULT_MEM_SIZE, load_image, run, state_hash
from .pulpregs import CSR_NAMES, N_SMAR
from .runtime import DEFAULT_STACK_WINDOW, PER_CALL, PER_PROTECT, STACK_GROUP, MacroError
from .trace import TraceWriter
from .traps import TrapKind

EXIT_USAGE = 2
EXIT_STEP_LIMIT = 15
EXIT_OTHER_TRAP = 14
EXIT_CODES = {
    TrapKind.OUT_OF_BOUND_ACCESS: 10,
    TrapKind.RETURN_ADDRESS_ERROR: 11,
    TrapKind.PULP_CONFIG_VIOLATION: 12,
    TrapKind.BOUNDARY_VIOLATION: 13,
}
DEFAULT_MAX_STEPS = 50_000_000


def exit_code_for(kind: TrapKind) -> int:
    return EXIT_CODES.get(kind, EXIT_OTHER_TRAP)


def _err(msg: str) -> None:
    print(f"pulpsim: {msg}", file=sys.stderr)


def _write_json(path: str | None, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_asm(args) -> int:
    try:
        image = assemble_file(args.source)
    except (AsmError, MacroError) as e:
        _err(f"{args.source}: {e}")
        return EXIT_USAGE
    except OSError as e:
        _err(str(e))
        return EXIT_USAGE
    try:
        image.save(args.output)
    except OSError as e:
        _err(str(e))
        return EXIT_USAGE
    return 0


def _load_program(path: str) -> ProgramImage:
    if path.endswith(".s"):
        return assemble_file(path)
    return ProgramImage.load(path)


def cmd_run(args) -> int:
    if args.max_steps <= 0:
        _err("--max-steps must be positive")
        return EXIT_USAGE
    try:
        image = _load_program(args.image)
        data = Path(args.input).read_bytes() if args.input else b""
        st = load_image(image, args.mem_size, pulp_enabled=not args.no_pulp, input=data)
    except (OSError, ImageError, AsmError, MacroError) as e:
        _err(str(e))
        return EXIT_USAGE

    writer = fp = None
    try:
        if args.trace:
            fp = open(args.trace, "wb")
            writer = TraceWriter(fp)
        result = run(st, args.max_steps, trace=writer or False)
        if writer is not None:
            writer.flush()
    except OSError as e:
        _err(str(e))
        return EXIT_USAGE
    finally:
        if fp is not None:
            fp.close()

    sys.stdout.buffer.write(bytes(st.output))
    sys.stdout.flush()
    outcome = result.outcome
    if outcome.kind == "exited":
        code = outcome.code
    elif outcome.kind == "trapped":
        cause = outcome.cause
        _err(f"trap: {cause}")
        code = exit_code_for(cause.kind)
    else:
        _err(f"step limit: {args.max_steps} instructions retired")
        code = EXIT_STEP_LIMIT
    if args.report:
        report = {"image": args.image, "pulp_enabled": st.pulp_enabled, "outcome": outcome.to_dict(),
                  "exit_status": code, "counters": st.counters.to_dict(),
                  "pc": st.pc, "state_hash": state_hash(st), "output_len": len(st.output)}
        if writer is not None:
            report["trace_hash"] = writer.hexdigest()
        try:
            _write_json(args.report, report)
        except OSError as e:
            _err(str(e))
            return EXIT_USAGE
    return code


def cmd_bench(args) -> int:
    if args.jobs < 1:
        _err("--jobs must be at least 1")
        return EXIT_USAGE
    try:
        specs = harness.load_bench(args.manifest)
    except (OSError, harness.ManifestError, KeyError) as e:
        _err(f"cannot read bench manifest: {e}")
        return EXIT_USAGE
    results = harness.run_benches(specs, jobs=args.jobs)
    report = harness.overhead_report(results)
    print(harness.bench_table(report))
    if args.output:
        try:
            _write_json(args.output, report)
        except OSError as e:
            _err(str(e))
            return EXIT_USAGE
    for failure in report["failures"]:
        _err(f"FAIL {failure}")
    return 0 if report["passed"] else 1


def cmd_cases(args) -> int:
    if args.jobs < 1:
        _err("--jobs must be at least 1")
        return EXIT_USAGE
    try:
        specs = harness.load_manifest(args.manifest)
    except (OSError, harness.ManifestError, KeyError) as e:
        _err(f"cannot read manifest: {e}")
        return EXIT_USAGE
    if args.only:
        specs = [s for s in specs if s.name in set(args.only)]
    reports = harness.run_cases(specs, jobs=args.jobs, trace=args.audit)
    print(harness.case_table(reports))
    if args.output:
        try:
            _write_json(args.output, [r.to_dict() for r in reports])
        except OSError as e:
            _err(str(e))
            return EXIT_USAGE
    failed = [f"{r.name} ({'on' if r.pulp_enabled else 'off'})" for r in reports if not r.passed]
    for name in failed:
        _err(f"FAIL {name}")
    return 1 if failed else 0


def machine_description() -> dict:
    return {
        "version": __version__,
        "isa": "RV32I + csrrw/csrrs, little-endian",
        "default_mem_size": DEFAULT_MEM_SIZE,
        "n_smar": N_SMAR,
        "csr_map": {f"{addr:#05x}": name for name, addr in sorted(CSR_NAMES.items(), key=lambda kv: kv[1])},
        "cfg_bits": {"read": 1, "write": 2, "valid": 4},
        "stack_window": {"group": STACK_GROUP, "bytes": DEFAULT_STACK_WINDOW},
        "config_cost": {"per_call": PER_CALL, "per_protect": PER_PROTECT},
        "exit_codes": {**{k.value: v for k, v in EXIT_CODES.items()}, "other_trap": EXIT_OTHER_TRAP,
                       "step_limit": EXIT_STEP_LIMIT, "usage_or_io": EXIT_USAGE},
    }


def cmd_info(args) -> int:
    desc = machine_description()
    if args.json:
        _write_json(None, desc)
        return 0
    print(f"pulpsim {desc['version']}: {desc['isa']}")
    print(f"memory: {desc['default_mem_size']} bytes flat, SP starts at top - 16")
    print(f"SMAR groups: N = {desc['n_smar']} (group {STACK_GROUP} reserved for the callee stack window)")
    print("CSR map:")
    for addr, name in desc["csr_map"].items():
        print(f"  {addr}  {name}")
    print("exit codes: " + ", ".join(f"{k}={v}" for k, v in desc["exit_codes"].items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pulpsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pulpsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("asm", help="assemble a source file into an image")
    a.add_argument("source")
    a.add_argument("-o", "--output", required=True)
    a.set_defaults(func=cmd_asm)

    r = sub.add_parser("run", help="run an image (or a .s source)")
    r.add_argument("image")
    mode = r.add_mutually_exclusive_group()
    mode.add_argument("--pulp", dest="no_pulp", action="store_false", help="checks on (default)")
    mode.add_argument("--no-pulp", dest="no_pulp", action="store_true", help="checks off")
    r.add_argument("--input", help="file fed to read()")
    r.add_argument("--trace", help="write JSONL trace here")
    r.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    r.add_argument("--mem-size", type=lambda s: int(s, 0), default=DEFAULT_MEM_SIZE)
    r.add_argument("--report", help="write a JSON final report here ('-' for stdout)")
    r.set_defaults(func=cmd_run, no_pulp=False)

    b = sub.add_parser("bench", help="run bench programs and check the overhead thresholds")
    b.add_argument("manifest", nargs="?", default=str(harness.DEFAULT_BENCH))
    b.add_argument("-o", "--output")
    b.add_argument("--jobs", type=int, default=1)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("cases", help="run the security corpus in both modes")
    c.add_argument("manifest", nargs="?", default=str(harness.DEFAULT_MANIFEST))
    c.add_argument("-o", "--output")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--audit", action="store_true", help="trace, hash and audit every run")
    c.add_argument("--only", nargs="*", help="case names to run")
    c.set_defaults(func=cmd_cases)

    i = sub.add_parser("info", help="describe the simulated machine")
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
