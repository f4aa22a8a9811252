"""Random annotated programs for whole-machine soundness checks.

Programs are straight-line code with forward branches only, so every one
terminates. Primary code sets up buffers and makes protected calls, each into its own
secondary function. The callee mostly uses what it was granted and its stack
window, and now and then misbehaves on purpose: offsets past the window,
wrong returns, CSR writes, reads of globals nobody granted.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .assembler import assemble
from .audit import AuditReport, TraceAuditor
from .image import ProgramImage
from .machine import RunResult, load_image, run

ALU_OPS = ["add", "sub", "xor", "or", "and", "sll", "srl", "sra", "slt", "sltu"]
ALU_IMM_OPS = ["addi", "xori", "ori", "andi", "slti", "sltiu"]
VALUE_REGS = ["s2", "s3", "s4", "s5", "s6", "s7"]
ARG_REGS = ["a0", "a1", "a2", "a3"]
WIDTHS = {1: ("lbu", "sb"), 2: ("lhu", "sh"), 4: ("lw", "sw")}
BRANCHES = ["beq", "bne", "blt", "bge", "bltu", "bgeu"]


@dataclass
class FuzzConfig:
    max_instructions: int = 200
    n_buffers: int = 4
    p_out_of_window: float = 0.08
    p_wrong_return: float = 0.04
    p_secondary_csr: float = 0.02
    p_ungranted_global: float = 0.03


@dataclass
class FuzzProgram:
    seed: int
    source: str
    image: ProgramImage
    instructions: int
    buffers: dict[str, int] = field(default_factory=dict)


class _Gen:
    def __init__(self, rng: random.Random, cfg: FuzzConfig):
        self.rng = rng
        self.cfg = cfg
        self.labels = 0
        self.callees: list[list[str]] = []
        self.sizes = {f"buf{i}": rng.choice([4, 8, 16, 24, 32, 64]) for i in range(cfg.n_buffers)}

    def label(self) -> str:
        self.labels += 1
        return f"L{self.labels}"

    def alu(self) -> str:
        r = self.rng
        rd, a, b = r.choice(VALUE_REGS), r.choice(VALUE_REGS), r.choice(VALUE_REGS)
        if r.random() < 0.5:
            return f"{r.choice(ALU_OPS)} {rd}, {a}, {b}"
        return f"{r.choice(ALU_IMM_OPS)} {rd}, {a}, {r.randint(-2048, 2047)}"

    def branch_block(self, body) -> list[str]:
        r = self.rng
        skip = self.label()
        lines = [f"{r.choice(BRANCHES)} {r.choice(VALUE_REGS)}, {r.choice(VALUE_REGS)}, {skip}"]
        lines += body()
        lines.append(f"{skip}:")
        return lines

    def mem_op(self, base: str, lo: int, hi: int) -> str:
        r = self.rng
        width = r.choice([1, 2, 4])
        lo = (lo + width - 1) // width * width
        off = r.randrange(lo, max(lo + 1, hi - width + 1), width) if hi - width >= lo else lo
        load, store = WIDTHS[width]
        if r.random() < 0.5:
            return f"{load} {r.choice(VALUE_REGS)}, {off}({base})"
        return f"{store} {r.choice(VALUE_REGS)}, {off}({base})"

    # -- secondary
    def access(self, base: str, lo: int, hi: int, cfg: str) -> str:
        """A load or store in [lo, hi) that ``cfg`` permits, when one fits."""
        r = self.rng
        fits = [w for w in (1, 2, 4) if (lo + w - 1) // w * w + w <= hi]
        if not fits:
            return self.alu()
        width = r.choice(fits)
        first = (lo + width - 1) // width * width
        off = r.randrange(first, hi - width + 1, width)
        load, store = WIDTHS[width]
        write = "W" in cfg and ("R" not in cfg or r.random() < 0.5)
        if write:
            return f"{store} {r.choice(VALUE_REGS)}, {off}({base})"
        return f"{load} {r.choice(VALUE_REGS)}, {off}({base})"

    def secondary_item(self, grants: list[tuple[int, int, str]]) -> list[str]:
        r, cfg = self.rng, self.cfg
        if r.random() < cfg.p_secondary_csr:
            k = r.randrange(8)
            return [f"csrw smar{k}_{r.choice(['lo', 'hi', 'cfg'])}, {r.choice(VALUE_REGS)}"]
        if r.random() < cfg.p_ungranted_global:
            name = r.choice(sorted(self.sizes))
            return [f"la a4, {name}", self.mem_op("a4", 0, self.sizes[name])]
        x = r.random()
        if x < 0.25:
            return [self.alu()]
        if x < 0.4:
            # The callee stack window is [sp - window, sp); sp+0 is already outside.
            if r.random() < cfg.p_out_of_window:
                return [self.mem_op("sp", -8, 8)]
            return [self.access("sp", r.choice([-64, -2048]), 0, "RW")]
        if x < 0.5:
            return self.branch_block(lambda: [self.alu()])
        if not grants or r.random() < cfg.p_out_of_window:
            i = r.randrange(self.cfg.n_buffers)
            return [self.mem_op(ARG_REGS[i], -8, self.sizes[f"buf{i}"] + 8)]
        i, length, perm = r.choice(grants)
        return [self.access(ARG_REGS[i], 0, length, perm)]

    def secondary(self, name: str, grants: list[tuple[int, int, str]]) -> list[str]:
        r = self.rng
        lines = [f"{name}:"]
        for _ in range(r.randint(1, 8)):
            lines += self.secondary_item(grants)
        if r.random() < self.cfg.p_wrong_return:
            lines.append(f"addi ra, ra, {r.choice([4, 8, -4])}")
        lines.append("ret")
        return lines

    # -- primary
    def call(self) -> list[str]:
        r = self.rng
        callee = f"sec{len(self.callees)}"
        n = self.cfg.n_buffers
        chosen = r.sample(range(n), r.randint(0, min(3, n)))
        indices = r.sample(range(7), len(chosen))
        lines = [f"la {ARG_REGS[i]}, buf{i}" for i in range(n)]
        protects, grants = [], []
        for i, idx in zip(chosen, indices):
            size = self.sizes[f"buf{i}"]
            length = size if r.random() < 0.7 else r.randint(0, size)
            perm = r.choice(["R", "W", "RW", "RW"])
            protects.append(f"(buf{i}, {length}, {perm}, {idx})")
            grants.append((i, length, perm))
        self.callees.append(self.secondary(callee, grants))
        lines.append("%protect_call " + ", ".join([callee] + protects))
        return lines

    def primary_item(self) -> list[str]:
        r = self.rng
        x = r.random()
        if x < 0.3:
            return self.call()
        if x < 0.6:
            return [self.alu()]
        if x < 0.8:
            name = r.choice(sorted(self.sizes))
            return [f"la a4, {name}", self.mem_op("a4", 0, self.sizes[name])]
        return self.branch_block(lambda: [self.alu(), self.alu()])

    def program(self, n_items: int) -> str:
        r = self.rng
        out = [".org 0x1000", ".primary_start", "_start:"]
        out += [f"li {reg}, {r.randint(-2 ** 31, 2 ** 31 - 1)}" for reg in VALUE_REGS]
        for _ in range(n_items):
            out += self.primary_item()
        out += ["li a0, 0", "li a7, 93", "ecall", ".primary_end"]
        for body in self.callees:
            out += body
        out.append(".org 0x8000")
        for name, size in sorted(self.sizes.items()):
            out += [".align 2", f"{name}: .space {size}"]
        return "\n".join(out) + "\n"


def _count(image: ProgramImage) -> int:
    return sum(len(data) for base, data in image.segments if base < 0x8000) // 4


def generate(seed: int, cfg: FuzzConfig | None = None) -> FuzzProgram:
    """A random program of at most ``cfg.max_instructions`` instructions."""
    cfg = cfg or FuzzConfig()
    rng = random.Random(seed)
    n_items = rng.randint(1, 12)
    while True:
        state = rng.getstate()
        gen = _Gen(rng, cfg)
        source = gen.program(n_items)
        image = assemble(source)
        count = _count(image)
        if count <= cfg.max_instructions:
            return FuzzProgram(seed, source, image, count, dict(gen.sizes))
        rng.setstate(state)
        rng.random()
        n_items = max(0, n_items - 1)


def audit_program(prog: FuzzProgram, pulp_enabled: bool = True,
                  max_steps: int = 100_000) -> tuple[RunResult, AuditReport]:
    """Run ``prog`` with the auditor attached to its event stream."""
    st = load_image(prog.image, pulp_enabled=pulp_enabled)
    auditor = TraceAuditor(enforce=pulp_enabled)
    result = run(st, max_steps, trace=auditor)
    return result, auditor.finish()
