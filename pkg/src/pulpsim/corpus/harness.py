"""Run corpus cases and bench programs, one machine per run.

A case is a program plus input and two expectations: what must happen with
checks on, and what the unprotected baseline must exhibit (exit status plus
corruption witnesses). Bench programs additionally feed the overhead
report. Pass/fail is decided only from the recorded run, never from prose.
"""

from __future__ import annotations

import json
import re
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..assembler import AsmError, assemble_file, evaluate
from ..audit import TraceAuditor
from ..image import ProgramImage
from ..machine import DEFAULT_MEM_SIZE, MachineState, load_image, run, state_hash
from ..runtime import END_CONFIG, PER_CALL, PER_PROTECT, START_CONFIG, MacroError
from ..trace import TraceWriter, tee

HERE = Path(__file__).parent
DEFAULT_MANIFEST = HERE / "manifest.json"
DEFAULT_BENCH = HERE / "bench.json"

CASE_MAX_STEPS = 20_000_000
BENCH_MAX_STEPS = 50_000_000

_CALL_SITE = re.compile(r"__pcall\d+_p(\d+)$")


class ManifestError(ValueError):
    pass


@dataclass
class Expectation:
    outcome: str
    code: int | None = None
    cause: str | None = None
    addr: str | None = None
    access: str | None = None
    target: str | None = None
    expected: str | None = None
    witness: list[dict] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> Expectation:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ManifestError(f"unknown expectation keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class CaseSpec:
    name: str
    source: Path
    image: ProgramImage | None
    input: bytes
    expect_with_pulp: Expectation
    expect_without_pulp: Expectation
    group: str = "security"
    forbidden: list[str] = field(default_factory=list)
    pattern: str = ""
    fidelity: str = ""
    error: str | None = None      # assembly or input error, reported as a failure

    def expectation(self, pulp_enabled: bool) -> Expectation:
        return self.expect_with_pulp if pulp_enabled else self.expect_without_pulp


@dataclass
class CaseReport:
    name: str
    pulp_enabled: bool
    outcome: dict
    passed: bool
    failures: list[str]
    pc: int | None = None
    addr: int | None = None
    counters: dict = field(default_factory=dict)
    output_len: int = 0
    state_hash: str | None = None
    trace_hash: str | None = None
    audit: dict | None = None
    calls: int = 0
    protects: int = 0
    standalone: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["standalone"] = list(self.standalone)
        return d


def _symbol_env(image: ProgramImage, mem_size: int) -> dict[str, int]:
    return {**image.symbols, "__sp0": mem_size - 16}


def build_input(spec: Any, base: Path, symbols: dict[str, int]) -> bytes:
    """Input is a file path or a list of parts: text, hex, fill/count, u8 or u32 (symbols allowed)."""
    if spec is None:
        return b""
    if isinstance(spec, str):
        return (base / spec).read_bytes()
    out = bytearray()
    for part in spec:
        if "text" in part:
            out += part["text"].encode("latin-1")
        elif "hex" in part:
            out += bytes.fromhex(part["hex"])
        elif "fill" in part:
            out += bytes([part["fill"]]) * part["count"]
        elif "u8" in part:
            out.append(part["u8"] & 0xFF)
        elif "u32" in part:
            value = part["u32"]
            if isinstance(value, str):
                value = evaluate(value, symbols)
            out += struct.pack("<I", value & 0xFFFFFFFF)
        else:
            raise ManifestError(f"unknown input part {part}")
    return bytes(out)


def load_manifest(path: str | Path = DEFAULT_MANIFEST) -> list[CaseSpec]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: {e}") from e
    base = path.parent
    specs = []
    for entry in raw.get("cases", []):
        source = base / entry["source"]
        image, error, data = None, None, b""
        try:
            image = assemble_file(source, entry.get("defines"))
            data = build_input(entry.get("input"), base, _symbol_env(image, DEFAULT_MEM_SIZE))
        except (AsmError, MacroError, OSError) as e:
            error = f"{type(e).__name__}: {e}"
        specs.append(CaseSpec(
            name=entry["name"], source=source, image=image, input=data,
            expect_with_pulp=Expectation.from_dict(entry["expect_with_pulp"]),
            expect_without_pulp=Expectation.from_dict(entry["expect_without_pulp"]),
            group=entry.get("group", "security"), forbidden=list(entry.get("forbidden", [])),
            pattern=entry.get("pattern", ""), fidelity=entry.get("fidelity", ""), error=error))
    return sorted(specs, key=lambda s: s.name)


# ---------------------------------------------------------------- site counting

def watch_sites(st: MachineState) -> None:
    """Count executions of the instrumented call sites and standalone macros."""
    for name, addr in st.symbols.items():
        if name.startswith(("__pcall", "__pstart", "__pend")):
            st.watch[addr] = 0


def count_sites(st: MachineState) -> tuple[int, int, int, int]:
    """(calls, protects at call sites, standalone starts, standalone ends)."""
    calls = protects = starts = ends = 0
    for name, addr in st.symbols.items():
        hits = st.watch.get(addr, 0)
        m = _CALL_SITE.match(name)
        if m:
            calls += hits
            protects += hits * int(m.group(1))
        elif name.startswith("__pstart"):
            starts += hits
        elif name.startswith("__pend"):
            ends += hits
    return calls, protects, starts, ends


def expected_config(calls: int, protects: int, starts: int = 0, ends: int = 0) -> int:
    return PER_CALL * calls + PER_PROTECT * protects + START_CONFIG * starts + END_CONFIG * ends


# ---------------------------------------------------------------- cases

def _check(exp: Expectation, st: MachineState, outcome, env: dict[str, int]) -> list[str]:
    fails = []
    if outcome.kind != exp.outcome:
        fails.append(f"outcome {outcome.kind} != {exp.outcome}")
        return fails
    if exp.code is not None and outcome.code != exp.code:
        fails.append(f"exit code {outcome.code} != {exp.code}")
    cause = outcome.cause
    if exp.cause is not None:
        if cause is None or cause.kind.value != exp.cause:
            fails.append(f"cause {cause.kind.value if cause else None} != {exp.cause}")
        else:
            for key in ("addr", "target", "expected"):
                want = getattr(exp, key)
                if want is not None and getattr(cause, key) != evaluate(want, env):
                    got = getattr(cause, key)
                    fails.append(f"{key} {got if got is None else hex(got)} != {want} "
                                 f"({evaluate(want, env):#x})")
            if exp.access is not None and (cause.access is None or cause.access.value != exp.access):
                fails.append(f"access {cause.access} != {exp.access}")
    for w in exp.witness:
        if "output_contains" in w:
            if w["output_contains"].encode("latin-1") not in st.output:
                fails.append(f"output lacks {w['output_contains']!r}")
        elif "output_contains_hex" in w:
            if bytes.fromhex(w["output_contains_hex"]) not in st.output:
                fails.append(f"output lacks bytes {w['output_contains_hex']}")
        elif "memory" in w:
            addr = evaluate(w["memory"], env)
            got = int.from_bytes(st.mem[addr:addr + w["size"]], "little")
            want = w["value"] if isinstance(w["value"], int) else evaluate(w["value"], env)
            if got != want:
                fails.append(f"memory[{w['memory']}] = {got:#x}, want {want:#x}")
        elif "reached" in w:
            if not st.watch.get(evaluate(w["reached"], env)):
                fails.append(f"{w['reached']} never executed")
        else:
            fails.append(f"unknown witness {w}")
    return fails


def run_case(spec: CaseSpec, pulp_enabled: bool, *, max_steps: int = CASE_MAX_STEPS,
             trace: bool = False, trace_path: str | Path | None = None,
             mem_size: int = DEFAULT_MEM_SIZE, on_chunk=None) -> CaseReport:
    """Run one case in one mode and judge it against the matching expectation.

    With ``trace`` the run is also hashed and replayed by the auditor; the
    report then carries ``trace_hash`` and the audit summary, and an unsound
    audit under checks counts as a failure.
    """
    if spec.image is None:
        return CaseReport(spec.name, pulp_enabled, {"kind": "error"}, False, [spec.error or "no image"])
    try:
        st = load_image(spec.image, mem_size, pulp_enabled=pulp_enabled, input=spec.input)
    except Exception as e:  # image does not fit, and similar
        return CaseReport(spec.name, pulp_enabled, {"kind": "error"}, False, [f"load: {e}"])
    env = _symbol_env(spec.image, mem_size)
    watch_sites(st)
    exp = spec.expectation(pulp_enabled)
    for w in exp.witness:
        if "reached" in w:
            st.watch.setdefault(evaluate(w["reached"], env), 0)
    forbidden = {n: env[n] for n in spec.forbidden}
    for addr in forbidden.values():
        st.watch.setdefault(addr, 0)

    writer = auditor = None
    fp = None
    sink = None
    if trace or trace_path is not None or on_chunk is not None:
        if trace_path is not None:
            fp = open(trace_path, "wb")
        writer = TraceWriter(fp, on_chunk)
        auditor = TraceAuditor(set(forbidden.values()), enforce=pulp_enabled)
        sink = tee(writer, auditor)
    try:
        result = run(st, max_steps, trace=sink or False)
    finally:
        if writer is not None:
            writer.flush()
        if fp is not None:
            fp.close()
    outcome = result.outcome
    fails = _check(exp, st, outcome, env)
    if pulp_enabled:
        fails += [f"forbidden {n} executed" for n, a in forbidden.items() if st.watch.get(a)]
    if outcome.kind == "step_limit" and exp.outcome != "step_limit":
        fails.insert(0, f"step limit {max_steps} exceeded")

    calls, protects, starts, ends = count_sites(st)
    report = CaseReport(
        spec.name, pulp_enabled, outcome.to_dict(), not fails, fails,
        pc=outcome.cause.pc if outcome.cause else None,
        addr=outcome.cause.addr if outcome.cause else None,
        counters=st.counters.to_dict(), output_len=len(st.output),
        state_hash=state_hash(st), calls=calls, protects=protects, standalone=(starts, ends))
    if writer is not None:
        report.trace_hash = writer.hexdigest()
        audit = auditor.finish()
        report.audit = audit.summary()
        if pulp_enabled and not audit.sound:
            report.failures.append(f"audit: {audit.summary()}")
            report.passed = False
    return report


def _run_job(job):
    spec, pulp, kwargs = job
    return run_case(spec, pulp, **kwargs)


def run_cases(specs: list[CaseSpec], jobs: int = 1, modes=(True, False),
              **kwargs) -> list[CaseReport]:
    """Both modes of every case; results sorted by (name, mode) whatever ``jobs`` is."""
    work = [(s, m, kwargs) for s in specs for m in modes]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_job, work))
    else:
        reports = [_run_job(w) for w in work]
    return sorted(reports, key=lambda r: (r.name, not r.pulp_enabled))


# ---------------------------------------------------------------- bench

@dataclass
class BenchSpec:
    name: str
    source: Path
    defines: dict[str, int] = field(default_factory=dict)
    max_ratio: float | None = None
    exact_ratio: float | None = None
    fit: bool = False


@dataclass
class BenchResult:
    name: str
    passed: bool
    failures: list[str]
    instructions: int = 0
    instructions_without_pulp: int = 0
    config_instructions: int = 0
    calls: int = 0
    protects: int = 0
    standalone: tuple[int, int] = (0, 0)
    ratio: float | None = None
    max_ratio: float | None = None
    exact_ratio: float | None = None
    fit: bool = False
    outcome: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["standalone"] = list(self.standalone)
        return d


def load_bench(path: str | Path = DEFAULT_BENCH) -> list[BenchSpec]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: {e}") from e
    specs = []
    for entry in raw.get("cases", []):
        specs.append(BenchSpec(entry["name"], path.parent / entry["source"],
                               dict(entry.get("defines", {})), entry.get("max_ratio"),
                               entry.get("exact_ratio"), bool(entry.get("fit", False))))
    return sorted(specs, key=lambda s: s.name)


def run_bench(spec: BenchSpec, max_steps: int = BENCH_MAX_STEPS) -> BenchResult:
    res = BenchResult(spec.name, False, [], max_ratio=spec.max_ratio,
                      exact_ratio=spec.exact_ratio, fit=spec.fit)
    try:
        image = assemble_file(spec.source, spec.defines)
    except (AsmError, MacroError, OSError) as e:
        res.failures.append(f"{type(e).__name__}: {e}")
        return res
    states = {}
    for pulp in (True, False):
        st = load_image(image, pulp_enabled=pulp)
        watch_sites(st)
        outcome = run(st, max_steps).outcome
        states[pulp] = st
        if pulp:
            res.outcome = outcome.to_dict()
        if outcome.kind != "exited":
            res.failures.append(f"{'with' if pulp else 'without'} checks: {outcome.kind}"
                                + (f" ({outcome.cause})" if outcome.cause else ""))
    if res.failures:
        return res
    on, off = states[True], states[False]
    c = on.counters
    res.instructions = c.instructions_retired
    res.instructions_without_pulp = off.counters.instructions_retired
    res.config_instructions = c.config_instructions
    calls, protects, starts, ends = count_sites(on)
    res.calls, res.protects, res.standalone = calls, protects, (starts, ends)
    res.ratio = c.config_instructions / c.instructions_retired
    if res.instructions != res.instructions_without_pulp:
        res.failures.append(f"retired {res.instructions} with checks vs "
                            f"{res.instructions_without_pulp} without")
    if c.config_instructions != expected_config(calls, protects, starts, ends):
        res.failures.append(f"config {c.config_instructions} != "
                            f"{expected_config(calls, protects, starts, ends)} from the cost formula")
    if spec.max_ratio is not None and not res.ratio < spec.max_ratio:
        res.failures.append(f"ratio {res.ratio:.6f} not below {spec.max_ratio}")
    if spec.exact_ratio is not None and res.ratio != spec.exact_ratio:
        res.failures.append(f"ratio {res.ratio} != {spec.exact_ratio}")
    res.passed = not res.failures
    return res


def run_benches(specs: list[BenchSpec], jobs: int = 1) -> list[BenchResult]:
    if jobs > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_bench, specs))
    else:
        results = [run_bench(s) for s in specs]
    return sorted(results, key=lambda r: r.name)


def fit_config_cost(results: list[BenchResult]) -> dict | None:
    """Least-squares fit of config = a*calls + b*protects + c over completed runs."""
    rows = [r for r in results if r.fit and r.passed]
    if len(rows) < 3:
        return None
    A = np.array([[r.calls, r.protects, 1.0] for r in rows])
    y = np.array([float(r.config_instructions) for r in rows])
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.max(np.abs(A @ coef - y)))
    return {"per_call": float(coef[0]), "per_protect": float(coef[1]), "intercept": float(coef[2]),
            "max_residual": resid, "rank": int(rank), "points": len(rows)}


def overhead_report(results: list[BenchResult]) -> dict:
    fit = fit_config_cost(results)
    failures = [f"{r.name}: {f}" for r in results for f in r.failures]
    return {
        "cases": [r.to_dict() for r in results],
        "ratios": {r.name: r.ratio for r in results},
        "fit": fit,
        "formula": {"per_call": PER_CALL, "per_protect": PER_PROTECT},
        "passed": not failures,
        "failures": failures,
    }


# ---------------------------------------------------------------- summaries

def case_table(reports: list[CaseReport]) -> str:
    lines = [f"{'case':<24} {'pulp':<4} {'outcome':<22} {'pc':>10} {'addr':>10} {'retired':>9}  result"]
    for r in reports:
        what = r.outcome.get("cause", {}).get("kind") or r.outcome["kind"]
        if r.outcome.get("code") is not None:
            what += f"({r.outcome['code']})"
        pc = f"{r.pc:#x}" if r.pc is not None else "-"
        addr = f"{r.addr:#x}" if r.addr is not None else "-"
        res = "PASS" if r.passed else "FAIL " + "; ".join(r.failures)
        lines.append(f"{r.name:<24} {'on' if r.pulp_enabled else 'off':<4} {what:<22} {pc:>10} "
                     f"{addr:>10} {r.counters.get('instructions_retired', 0):>9}  {res}")
    return "\n".join(lines)


def bench_table(report: dict) -> str:
    lines = [f"{'bench':<24} {'retired':>10} {'config':>8} {'calls':>6} {'prot':>5} {'ratio':>10}  result"]
    for r in report["cases"]:
        ratio = f"{r['ratio']:.6f}" if r["ratio"] is not None else "-"
        res = "PASS" if r["passed"] else "FAIL " + "; ".join(r["failures"])
        lines.append(f"{r['name']:<24} {r['instructions']:>10} {r['config_instructions']:>8} "
                     f"{r['calls']:>6} {r['protects']:>5} {ratio:>10}  {res}")
    fit = report["fit"]
    if fit:
        lines.append(f"fit: config = {fit['per_call']:.3f}*calls + {fit['per_protect']:.3f}*protects"
                     f" + {fit['intercept']:.3f}  (max residual {fit['max_residual']:.2e})")
    return "\n".join(lines)
