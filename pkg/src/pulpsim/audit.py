"""Independent replay of a trace.

The auditor shares no code with the checker or the register file: it keeps
its own shadow of PPCR/SMAR, rebuilt from the begin event and from every
retired CSR write, classifies PCs itself and derives region crossings from
consecutive PCs rather than from the ``transfer`` annotations. It can be fed
events one at a time, so arbitrarily long traces are audited in O(1) memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PULP_BASE = 0x7C0
N_GROUPS = 8
RAR_CSR = 0x7E0


@dataclass
class Finding:
    step: int
    pc: int
    what: str

    def __str__(self) -> str:
        return f"step {self.step} pc={self.pc:#x}: {self.what}"


@dataclass
class AuditReport:
    events: int = 0
    checked_accesses: int = 0
    illegal_accesses: list[Finding] = field(default_factory=list)
    unmatched_returns: list[Finding] = field(default_factory=list)
    unmatched_calls: list[Finding] = field(default_factory=list)
    region_mismatches: list[Finding] = field(default_factory=list)
    wrong_verdicts: list[Finding] = field(default_factory=list)
    forbidden_hits: list[Finding] = field(default_factory=list)
    open_groups: list[int] = field(default_factory=list)
    crossings: int = 0
    max_depth: int = 0
    trapped: bool = False

    @property
    def sound(self) -> bool:
        return not (self.illegal_accesses or self.unmatched_returns or self.unmatched_calls
                    or self.region_mismatches or self.wrong_verdicts or self.forbidden_hits)

    def summary(self) -> dict:
        return {
            "events": self.events, "checked_accesses": self.checked_accesses,
            "crossings": self.crossings, "max_depth": self.max_depth,
            "illegal_accesses": len(self.illegal_accesses),
            "unmatched_returns": len(self.unmatched_returns),
            "unmatched_calls": len(self.unmatched_calls),
            "region_mismatches": len(self.region_mismatches),
            "wrong_verdicts": len(self.wrong_verdicts),
            "forbidden_hits": len(self.forbidden_hits),
            "open_groups": list(self.open_groups), "sound": self.sound,
        }


class TraceAuditor:
    """Callable sink. ``forbidden`` is a set of PCs that must never execute.

    ``enforce`` says whether the traced run had checks enabled; with it off
    the auditor still replays (and counts what it would have rejected) but the
    findings describe the unprotected baseline rather than a soundness bug.
    """

    def __init__(self, forbidden=(), enforce: bool = True):
        self.forbidden = set(forbidden)
        self.enforce = enforce
        self.report = AuditReport()
        self.lo = self.hi = 0
        self.groups = [[0, 0, 0] for _ in range(N_GROUPS)]
        self.prev: dict | None = None
        self.prev_primary = False
        self.pending_link: int | None = None
        self.depth = 0

    def primary(self, pc: int) -> bool:
        return self.lo <= pc < self.hi

    def allowed(self, addr: int, size: int, write: bool) -> bool:
        bit = 2 if write else 1
        for lo, hi, cfg in self.groups:
            if cfg & 4 and cfg & bit and lo <= addr and addr + size <= hi:
                return True
        return False

    def _csr(self, csr: int, value: int) -> None:
        if csr == PULP_BASE:
            self.lo = value
        elif csr == PULP_BASE + 1:
            self.hi = value
        elif PULP_BASE + 2 <= csr < PULP_BASE + 2 + 3 * N_GROUPS:
            k, fld = divmod(csr - PULP_BASE - 2, 3)
            self.groups[k][fld] = value & (7 if fld == 2 else 0xFFFFFFFF)

    def _crossing(self, prev: dict, was: bool, pc: int) -> None:
        rep = self.report
        rep.crossings += 1
        if was:
            if prev["kind"] not in ("jal", "jalr"):
                rep.unmatched_calls.append(Finding(prev["step"], prev["pc"],
                                                   f"entered secondary at {pc:#x} by {prev['kind']}"))
            self.pending_link = prev["pc"] + 4
            self.depth += 1
            rep.max_depth = max(rep.max_depth, self.depth)
        else:
            if self.pending_link != pc:
                want = "none" if self.pending_link is None else f"{self.pending_link:#x}"
                rep.unmatched_returns.append(Finding(prev["step"], prev["pc"],
                                                     f"returned to {pc:#x}, call site expects {want}"))
            self.pending_link = None
            self.depth = max(0, self.depth - 1)

    def __call__(self, ev: dict) -> None:
        rep = self.report
        rep.events += 1
        kind = ev["kind"]
        if kind == "begin":
            self.lo, self.hi = ev["ppcr"]
            self.groups = [list(g) for g in ev["smar"]]
            self.prev = None
            return
        pc = ev["pc"]
        primary = self.lo <= pc < self.hi
        prev = self.prev
        if prev is not None and primary != self.prev_primary:
            self._crossing(prev, self.prev_primary, pc)
        if pc in self.forbidden:
            rep.forbidden_hits.append(Finding(ev["step"], pc, "reached a forbidden address"))
        recorded = ev["region"]
        if recorded != ("primary" if primary else "secondary") and recorded != "kernel":
            rep.region_mismatches.append(Finding(ev["step"], pc, f"recorded {recorded}, replay says "
                                                 f"{'primary' if primary else 'secondary'}"))
        verdict = ev.get("verdict", "pass")
        if not primary and (kind == "load" or kind == "store") and "addr" in ev:
            ok = self.allowed(ev["addr"], ev["size"], kind == "store")
            if self.enforce:
                rep.checked_accesses += 1
                if verdict == "pass" and not ok:
                    rep.illegal_accesses.append(Finding(ev["step"], pc, f"{kind} {ev['size']}@"
                                                        f"{ev['addr']:#x} outside every window"))
                if verdict == "out_of_bound_access" and ok:
                    rep.wrong_verdicts.append(Finding(ev["step"], pc, f"trapped a permitted {kind}"))
        if verdict != "pass":
            rep.trapped = True
            self.prev = None
            return
        if kind == "csr" and ev.get("write"):
            self._csr(ev["csr"], ev["value"])
        self.prev = ev
        self.prev_primary = primary

    def finish(self) -> AuditReport:
        rep = self.report
        rep.open_groups = [k for k, g in enumerate(self.groups) if g[2] & 4]
        return rep


def audit(events, forbidden=(), enforce: bool = True) -> AuditReport:
    a = TraceAuditor(forbidden, enforce)
    for ev in events:
        a(ev)
    return a.finish()
