"""Functional RV32I machine with PULP checks, a micro-kernel and counters.

Each instruction word is compiled once into a closure specialised for its
PC, region and operands. The cache is keyed by PC and dropped on stores to
cached words and on PPCR or privilege changes, so compiled semantics always
match the current memory and region map.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

from . import checker
from .checker import EffectKind, Transfer, apply_control_effect, check_control_transfer
from .image import ProgramImage
from .isa import Illegal, Kind, decode
from .pulpregs import (CSR_PPCR_HI, CSR_PPCR_LO, AccessKind, Privilege, PulpConfigViolation,
                       PulpRegisterFile, Region, UnknownCsr, classify_region, is_pulp_csr,
                       pulp_csr_read, pulp_csr_write)
from .traps import Trap, TrapCause, TrapKind

__all__ = ["DEFAULT_MEM_SIZE", "MachineState", "Outcome", "PerfCounters", "RunResult",
           "Status", "Trap", "TrapCause", "TrapKind", "load_image", "run", "state_hash",
           "step", "syscall"]

DEFAULT_MEM_SIZE = 1 << 20
M32 = 0xFFFFFFFF

SYS_READ = 63
SYS_WRITE = 64
SYS_EXIT = 93

CSR_CYCLE, CSR_INSTRET, CSR_CYCLEH, CSR_INSTRETH = 0xC00, 0xC02, 0xC80, 0xC82
CSR_TIME, CSR_TIMEH = 0xC01, 0xC81
_STANDARD_CSRS = {CSR_CYCLE, CSR_TIME, CSR_INSTRET, CSR_CYCLEH, CSR_TIMEH, CSR_INSTRETH}

READ, WRITE = AccessKind.READ, AccessKind.WRITE
PRIMARY, SECONDARY, KERNEL = Region.PRIMARY, Region.SECONDARY, Region.KERNEL


class Status(enum.Enum):
    RUNNING = "running"
    EXITED = "exited"
    TRAPPED = "trapped"


class MachineHalted(RuntimeError):
    pass


class _Halt(Exception):
    pass


@dataclass
class PerfCounters:
    instructions_retired: int = 0
    loads: int = 0
    stores: int = 0
    checks_performed: int = 0
    config_instructions: int = 0
    traps: int = 0

    def to_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


@dataclass(eq=False)
class MachineState:
    mem: bytearray
    pc: int = 0
    regs: list[int] = field(default_factory=lambda: [0] * 32)
    pulp: PulpRegisterFile = field(default_factory=PulpRegisterFile)
    counters: PerfCounters = field(default_factory=PerfCounters)
    status: Status = Status.RUNNING
    exit_code: int | None = None
    trap: TrapCause | None = None
    pulp_enabled: bool = True
    input: bytes = b""
    input_pos: int = 0
    output: bytearray = field(default_factory=bytearray)
    symbols: dict[str, int] = field(default_factory=dict)
    watch: dict[int, int] = field(default_factory=dict)
    _privilege: Privilege = Privilege.USER
    _code: dict[int, Callable[[], int]] = field(default_factory=dict, repr=False)
    _ev: dict | None = field(default=None, repr=False)

    @property
    def privilege(self) -> Privilege:
        return self._privilege

    @privilege.setter
    def privilege(self, value: Privilege) -> None:
        if value is not self._privilege:
            self._privilege = value
            self._code.clear()

    @property
    def mem_size(self) -> int:
        return len(self.mem)

    def region(self, pc: int | None = None) -> Region:
        return classify_region(self.pc if pc is None else pc, self._privilege, self.pulp)

    def set_pulp(self, regs: PulpRegisterFile) -> None:
        if (regs.ppcr_start, regs.ppcr_end) != (self.pulp.ppcr_start, self.pulp.ppcr_end):
            self._code.clear()
        self.pulp = regs

    def invalidate(self) -> None:
        self._code.clear()

    def read_word(self, addr: int) -> int:
        return int.from_bytes(self.mem[addr:addr + 4], "little")


@dataclass(frozen=True)
class Outcome:
    kind: str                      # "exited" | "trapped" | "step_limit"
    code: int | None = None
    cause: TrapCause | None = None

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.code is not None:
            d["code"] = self.code
        if self.cause is not None:
            d["cause"] = self.cause.to_dict()
        return d


@dataclass
class RunResult:
    state: MachineState
    outcome: Outcome
    trace: list[dict] | None = None


# ---------------------------------------------------------------- loader

def load_image(image: ProgramImage, mem_size: int = DEFAULT_MEM_SIZE, *,
               pulp_enabled: bool = True, input: bytes = b"") -> MachineState:
    """Build a ready-to-run user process, as the kernel loader would."""
    image.validate(mem_size)
    mem = bytearray(mem_size)
    for base, data in image.segments:
        mem[base:base + len(data)] = data
    pulp = PulpRegisterFile()
    # The loader runs at kernel privilege, which is what Rule 2 requires for PPCR.
    pulp = pulp_csr_write(pulp, CSR_PPCR_LO, image.primary_start, Region.KERNEL)
    pulp = pulp_csr_write(pulp, CSR_PPCR_HI, image.primary_end, Region.KERNEL)
    st = MachineState(mem=mem, pc=image.entry, pulp=pulp, pulp_enabled=pulp_enabled,
                      input=bytes(input), symbols=dict(image.symbols))
    st.regs[2] = (mem_size - 16) & M32
    return st


# ---------------------------------------------------------------- syscalls

def syscall(st: MachineState, number: int, args: tuple[int, ...], pc: int | None = None) -> MachineState:
    """Micro-kernel handler. Runs at kernel privilege, so its accesses are unchecked.

    Supported: exit(code), write(fd, buf, len), read(fd, buf, len); results go
    to a0. Raises :class:`Trap` for unknown numbers and bad buffers.
    """
    pc = st.pc if pc is None else pc
    saved = st._privilege
    st._privilege = Privilege.KERNEL
    try:
        if number == SYS_EXIT:
            st.exit_code = args[0] & 0xFF
            st.status = Status.EXITED
        elif number in (SYS_WRITE, SYS_READ):
            _, buf, length = args[:3]
            if buf + length > len(st.mem):
                raise Trap(TrapCause(TrapKind.MEM_FAULT, pc, addr=buf))
            if number == SYS_WRITE:
                st.output += st.mem[buf:buf + length]
                st.regs[10] = length & M32
            else:
                chunk = st.input[st.input_pos:st.input_pos + length]
                st.input_pos += len(chunk)
                st.mem[buf:buf + len(chunk)] = chunk
                code = st._code
                for w in range(buf & ~3, buf + len(chunk), 4):
                    code.pop(w, None)
                st.regs[10] = len(chunk)
        else:
            raise Trap(TrapCause(TrapKind.UNKNOWN_SYSCALL, pc, number=number))
    finally:
        st._privilege = saved
    return st


# ---------------------------------------------------------------- executor

def _signed(v: int) -> int:
    return v - 0x100000000 if v & 0x80000000 else v


_ALU = {
    "add": lambda a, b: (a + b) & M32,
    "sub": lambda a, b: (a - b) & M32,
    "sll": lambda a, b: (a << (b & 31)) & M32,
    "slt": lambda a, b: int(_signed(a) < _signed(b)),
    "sltu": lambda a, b: int(a < b),
    "xor": lambda a, b: a ^ b,
    "srl": lambda a, b: a >> (b & 31),
    "sra": lambda a, b: (_signed(a) >> (b & 31)) & M32,
    "or": lambda a, b: a | b,
    "and": lambda a, b: a & b,
}
_ALU_IMM = {"addi": "add", "slti": "slt", "sltiu": "sltu", "xori": "xor", "ori": "or",
            "andi": "and", "slli": "sll", "srli": "srl", "srai": "sra"}
_BRANCH = {
    "beq": lambda a, b: a == b,
    "bne": lambda a, b: a != b,
    "blt": lambda a, b: _signed(a) < _signed(b),
    "bge": lambda a, b: _signed(a) >= _signed(b),
    "bltu": lambda a, b: a < b,
    "bgeu": lambda a, b: a >= b,
}
_TRANSFER_FOR = {Kind.JAL: Transfer.JAL_CALL, Kind.JALR: Transfer.JALR_CALL,
                 Kind.BRANCH: Transfer.BRANCH_TAKEN}


def _compile(st: MachineState, pc: int) -> Callable[[], int]:
    mem, regs, c = st.mem, st.regs, st.counters
    memsize = len(mem)
    if pc & 3:
        raise Trap(TrapCause(TrapKind.MISALIGNED_ACCESS, pc, addr=pc))
    if pc + 4 > memsize:
        raise Trap(TrapCause(TrapKind.MEM_FAULT, pc, addr=pc))
    word = int.from_bytes(mem[pc:pc + 4], "little")
    instr = decode(word)
    if isinstance(instr, Illegal):
        raise Trap(TrapCause(TrapKind.ILLEGAL_INSTRUCTION, pc, word=word))

    privilege = st._privilege
    region = classify_region(pc, privilege, st.pulp)
    checks = st.pulp_enabled and region is not KERNEL
    nxt = (pc + 4) & M32
    next_region = classify_region(nxt, privilege, st.pulp)
    falls_across = checks and next_region is not region
    kind = instr.kind
    rd, rs1, rs2, imm = instr.rd, instr.rs1, instr.rs2, instr.imm
    code = st._code

    def boundary() -> Trap:
        effect = check_control_transfer(region, Transfer.SEQUENTIAL, nxt, nxt, next_region, st.pulp)
        _, cause = apply_control_effect(effect, st.pulp, pc)
        return Trap(cause)

    def cross(effect_kind_transfer: Transfer, target: int, t_region: Region) -> None:
        effect = check_control_transfer(region, effect_kind_transfer, nxt, target, t_region, st.pulp)
        new, cause = apply_control_effect(effect, st.pulp, pc)
        if cause is not None:
            raise Trap(cause)
        st.pulp = new
        c.checks_performed += 1
        ev = st._ev
        if ev is not None:
            ev["transfer"] = effect.kind.value
            ev["rar"] = {"addr": new.rar_addr, "valid": new.rar_valid}

    fn: Callable[[], int]

    if kind is Kind.ALU_REG or kind is Kind.ALU_IMM:
        f = _ALU[instr.op if kind is Kind.ALU_REG else _ALU_IMM[instr.op]]
        if kind is Kind.ALU_REG:
            def fn():
                if rd:
                    regs[rd] = f(regs[rs1], regs[rs2])
                return nxt
        else:
            uimm = imm & M32
            def fn():
                if rd:
                    regs[rd] = f(regs[rs1], uimm)
                return nxt
    elif kind is Kind.LUI:
        value = (imm << 12) & M32
        def fn():
            if rd:
                regs[rd] = value
            return nxt
    elif kind is Kind.AUIPC:
        value = (pc + (imm << 12)) & M32
        def fn():
            if rd:
                regs[rd] = value
            return nxt
    elif kind is Kind.LOAD:
        size, signed = instr.width, instr.signed
        checked = checks and region is SECONDARY
        def fn():
            addr = (regs[rs1] + imm) & M32
            if checked:
                verdict = checker.check_data_access(region, addr, size, READ, st.pulp, pc)
                if verdict.cause is not None:
                    raise Trap(verdict.cause)
            if addr % size:
                raise Trap(TrapCause(TrapKind.MISALIGNED_ACCESS, pc, addr=addr, access=READ))
            if addr + size > memsize:
                raise Trap(TrapCause(TrapKind.MEM_FAULT, pc, addr=addr, access=READ))
            if rd:
                regs[rd] = int.from_bytes(mem[addr:addr + size], "little", signed=signed) & M32
            c.loads += 1
            ev = st._ev
            if ev is not None:
                ev.update(addr=addr, size=size, access="read")
                if checked:
                    ev["verdict"] = "pass"
            if checked:
                c.checks_performed += 1
            return nxt
    elif kind is Kind.STORE:
        size = instr.width
        checked = checks and region is SECONDARY
        def fn():
            addr = (regs[rs1] + imm) & M32
            if checked:
                verdict = checker.check_data_access(region, addr, size, WRITE, st.pulp, pc)
                if verdict.cause is not None:
                    raise Trap(verdict.cause)
            if addr % size:
                raise Trap(TrapCause(TrapKind.MISALIGNED_ACCESS, pc, addr=addr, access=WRITE))
            if addr + size > memsize:
                raise Trap(TrapCause(TrapKind.MEM_FAULT, pc, addr=addr, access=WRITE))
            mem[addr:addr + size] = (regs[rs2] & ((1 << (8 * size)) - 1)).to_bytes(size, "little")
            w = addr & ~3
            if w in code:
                del code[w]
            c.stores += 1
            ev = st._ev
            if ev is not None:
                ev.update(addr=addr, size=size, access="write")
                if checked:
                    ev["verdict"] = "pass"
            if checked:
                c.checks_performed += 1
            return nxt
    elif kind is Kind.JAL:
        target = (pc + imm) & M32
        t_region = classify_region(target, privilege, st.pulp)
        crossing = checks and t_region is not region
        def fn():
            if crossing:
                cross(Transfer.JAL_CALL, target, t_region)
            if target & 3:
                raise Trap(TrapCause(TrapKind.MISALIGNED_ACCESS, pc, addr=target))
            if rd:
                regs[rd] = nxt
            ev = st._ev
            if ev is not None:
                ev["target"] = target
            return target
    elif kind is Kind.JALR:
        def fn():
            target = (regs[rs1] + imm) & 0xFFFFFFFE
            if checks:
                t_region = classify_region(target, privilege, st.pulp)
                if t_region is not region:
                    cross(Transfer.JALR_CALL, target, t_region)
            if target & 3:
                raise Trap(TrapCause(TrapKind.MISALIGNED_ACCESS, pc, addr=target))
            if rd:
                regs[rd] = nxt
            ev = st._ev
            if ev is not None:
                ev["target"] = target
            return target
    elif kind is Kind.BRANCH:
        cond = _BRANCH[instr.op]
        target = (pc + imm) & M32
        t_region = classify_region(target, privilege, st.pulp)
        crossing = checks and t_region is not region
        def fn():
            if cond(regs[rs1], regs[rs2]):
                if crossing:
                    cross(Transfer.BRANCH_TAKEN, target, t_region)
                if target & 3:
                    raise Trap(TrapCause(TrapKind.MISALIGNED_ACCESS, pc, addr=target))
                ev = st._ev
                if ev is not None:
                    ev["target"] = target
                return target
            if falls_across:
                raise boundary()
            return nxt
    elif kind is Kind.CSRRW or kind is Kind.CSRRS:
        csr = instr.csr
        is_rw = kind is Kind.CSRRW
        writes = is_rw or rs1 != 0
        pulp_reg = is_pulp_csr(csr)
        if not pulp_reg and csr not in _STANDARD_CSRS:
            def fn():
                raise Trap(TrapCause(TrapKind.ILLEGAL_INSTRUCTION, pc, word=word, csr_id=csr))
        elif not pulp_reg and writes:
            def fn():
                raise Trap(TrapCause(TrapKind.ILLEGAL_INSTRUCTION, pc, word=word, csr_id=csr))
        else:
            def fn():
                if pulp_reg:
                    old = pulp_csr_read(st.pulp, csr, region)
                else:
                    n = c.instructions_retired
                    old = (n >> 32) & M32 if csr in (CSR_CYCLEH, CSR_TIMEH, CSR_INSTRETH) else n & M32
                ev = st._ev
                if writes:
                    value = regs[rs1] if is_rw else old | regs[rs1]
                    try:
                        new = pulp_csr_write(st.pulp, csr, value, region)
                    except PulpConfigViolation:
                        raise Trap(TrapCause(TrapKind.PULP_CONFIG_VIOLATION, pc, csr_id=csr)) from None
                    st.set_pulp(new)
                    c.config_instructions += 1
                    if ev is not None:
                        ev.update(csr=csr, value=value & M32, write=True)
                elif ev is not None:
                    ev.update(csr=csr, write=False)
                if rd:
                    regs[rd] = old
                return nxt
    elif kind is Kind.ECALL:
        def fn():
            number = regs[17]
            if falls_across and number != SYS_EXIT:
                if number not in (SYS_READ, SYS_WRITE):
                    raise Trap(TrapCause(TrapKind.UNKNOWN_SYSCALL, pc, number=number))
                raise boundary()
            ev = st._ev
            if ev is not None:
                ev["syscall"] = number
            syscall(st, number, (regs[10], regs[11], regs[12]), pc)
            if st.status is not Status.RUNNING:
                raise _Halt
            return nxt
    else:  # ebreak
        def fn():
            raise Trap(TrapCause(TrapKind.BREAKPOINT, pc))

    # An instruction that always traps reports its own cause; anything else
    # that would fall across the boundary stops before its side effects.
    if falls_across and kind not in (Kind.JAL, Kind.JALR, Kind.BRANCH, Kind.ECALL, Kind.EBREAK):
        def fn():
            raise boundary()

    if pc in st.watch:
        counted = fn
        def fn():
            r = counted()
            st.watch[pc] += 1
            return r

    fn.region = region
    fn.meta = (region.value, _event_kind(kind), instr.op)
    fn.size = instr.width if kind in (Kind.LOAD, Kind.STORE) else 0
    code[pc] = fn
    return fn


def _event_kind(kind: Kind) -> str:
    if kind in (Kind.ALU_IMM, Kind.ALU_REG):
        return "alu"
    if kind in (Kind.CSRRW, Kind.CSRRS):
        return "csr"
    return kind.value


def _run_loop(st: MachineState, max_steps: int, sink: Callable[[dict], None] | None) -> int:
    code = st._code
    c = st.counters
    pc = st.pc
    n = 0
    ev = None
    try:
        if sink is None:
            while n < max_steps:
                fn = code.get(pc)
                if fn is None:
                    fn = _compile(st, pc)
                pc = fn()
                n += 1
                c.instructions_retired += 1
        else:
            while n < max_steps:
                fn = code.get(pc)
                if fn is None:
                    ev = {"step": c.instructions_retired + 1, "pc": pc,
                          "region": st.region(pc).value, "kind": "fetch"}
                    fn = _compile(st, pc)
                region, kind, op = fn.meta
                ev = {"step": c.instructions_retired + 1, "pc": pc, "region": region,
                      "kind": kind, "op": op}
                st._ev = ev
                pc = fn()
                n += 1
                c.instructions_retired += 1
                st._ev = None
                sink(ev)
                ev = None
    except _Halt:
        n += 1
        c.instructions_retired += 1
        st._ev = None
        if ev is not None:
            sink(ev)
    except Trap as t:
        st._ev = None
        st.status = Status.TRAPPED
        st.trap = t.cause
        c.traps += 1
        if ev is not None:
            ev["verdict"] = t.cause.kind.value
            for key in ("addr", "target"):
                value = getattr(t.cause, key)
                if value is not None:
                    ev[key] = value
            if t.cause.access is not None:
                ev["access"] = t.cause.access.value
                if ev.get("kind") in ("load", "store"):
                    ev["size"] = fn.size
            if t.cause.expected is not None:
                ev["expected"] = t.cause.expected
            ev.setdefault("region", st.region(pc).value)
            ev.setdefault("kind", "fetch")
            sink(ev)
    st.pc = pc
    return n


def _begin_event(st: MachineState) -> dict:
    snap = st.pulp.snapshot()
    return {"step": st.counters.instructions_retired, "pc": st.pc, "region": st.region().value,
            "kind": "begin", **snap}


def step(st: MachineState) -> MachineState:
    """Execute one instruction. Traps are reported through ``st.status``."""
    if st.status is not Status.RUNNING:
        raise MachineHalted(f"machine is {st.status.value}")
    _run_loop(st, 1, None)
    return st


def run(st: MachineState, max_steps: int,
        trace: bool | Callable[[dict], None] = False) -> RunResult:
    """Run until exit, trap or ``max_steps`` retirements.

    ``trace`` may be True (events are collected and returned) or a callable
    receiving each event dict as it is produced.
    """
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    if st.status is not Status.RUNNING:
        raise MachineHalted(f"machine is {st.status.value}")
    events: list[dict] | None = None
    sink: Callable[[dict], None] | None = None
    if trace is True:
        events = []
        sink = events.append
    elif callable(trace):
        sink = trace
    if sink is not None:
        sink(_begin_event(st))
    _run_loop(st, max_steps, sink)
    if st.status is Status.EXITED:
        outcome = Outcome("exited", code=st.exit_code)
    elif st.status is Status.TRAPPED:
        outcome = Outcome("trapped", cause=st.trap)
    else:
        outcome = Outcome("step_limit")
    return RunResult(st, outcome, events)


def state_hash(st: MachineState) -> str:
    h = hashlib.sha256()
    meta = {
        "pc": st.pc, "regs": st.regs, "privilege": st.privilege.value,
        "pulp": st.pulp.snapshot(), "counters": st.counters.to_dict(),
        "status": st.status.value, "exit_code": st.exit_code,
        "trap": st.trap.to_dict() if st.trap else None,
        "pulp_enabled": st.pulp_enabled, "input_pos": st.input_pos,
    }
    h.update(json.dumps(meta, sort_keys=True).encode())
    h.update(bytes(st.output))
    h.update(st.mem)
    return h.hexdigest()
