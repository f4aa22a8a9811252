"""Software side of PULP: ``start_protect``/``end_protect`` expansion and
call-site instrumentation.

Expansions are lists of assembly source lines. They clobber the scratch
registers ``t0``/``t1`` (x5/x6), so those may not appear as operands.

Every instrumented call retires a fixed number of PULP CSR writes::

    config = PER_CALL + PER_PROTECT * len(protects)

where PER_CALL covers configuring and clearing the reserved stack-window
group and PER_PROTECT covers one start_protect plus its end_protect.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Mapping

from .isa import is_register, register_index
from .pulpregs import CFG_READ, CFG_VALID, CFG_WRITE, N_SMAR

STACK_GROUP = N_SMAR - 1
DEFAULT_STACK_WINDOW = 4096
SCRATCH = (5, 6)

START_CONFIG = 3   # lo, hi, cfg
END_CONFIG = 3     # cfg, lo, hi
PER_PROTECT = START_CONFIG + END_CONFIG
PER_CALL = START_CONFIG + END_CONFIG

CFG_BITS = {"R": CFG_READ, "W": CFG_WRITE, "RW": CFG_READ | CFG_WRITE, "WR": CFG_READ | CFG_WRITE}


class MacroError(ValueError):
    pass


class IndexOutOfRange(MacroError):
    pass


class UnknownLength(MacroError):
    pass


class StaticRegionError(MacroError):
    pass


@dataclass(frozen=True)
class ProtectSpec:
    """One window granted to a secondary callee.

    ``addr`` is a register name or an address expression; ``len`` is a
    register name, an expression, or an int.
    """

    addr: str
    len: str | int
    cfg: str = "RW"
    index: int = 0

    def __post_init__(self):
        if self.cfg.upper() not in CFG_BITS:
            raise MacroError(f"cfg must be R, W or RW, got {self.cfg!r}")
        if not 0 <= self.index < N_SMAR:
            raise IndexOutOfRange(f"SMAR index {self.index} outside 0..{N_SMAR - 1}")
        if isinstance(self.len, int) and self.len < 0:
            raise MacroError(f"negative length {self.len}")
        for operand in (self.addr, self.len):
            if isinstance(operand, str) and is_register(operand) \
                    and register_index(operand) in SCRATCH:
                raise MacroError(f"{operand} is a scratch register of the expansion")


@dataclass(frozen=True)
class CallSiteSpec:
    callee: str
    protects: tuple[ProtectSpec, ...] = ()
    stack_window: int = DEFAULT_STACK_WINDOW

    def __post_init__(self):
        indices = [p.index for p in self.protects]
        if len(set(indices)) != len(indices):
            raise MacroError(f"duplicate SMAR indices in call to {self.callee}: {indices}")
        if STACK_GROUP in indices:
            raise IndexOutOfRange(f"SMAR group {STACK_GROUP} is reserved for the callee stack window")


def _load(reg: str, operand: str | int) -> list[str]:
    if isinstance(operand, int):
        if -2048 <= operand < 2048:
            return [f"addi {reg}, zero, {operand}"]
        operand = str(operand)
    elif is_register(operand):
        return [f"addi {reg}, {operand}, 0"]
    return [f"lui {reg}, %hi({operand})", f"addi {reg}, {reg}, %lo({operand})"]


def expand_start_protect(spec: ProtectSpec) -> list[str]:
    k = spec.index
    lines = _load("t0", spec.addr)
    if isinstance(spec.len, str) and is_register(spec.len):
        lines.append(f"add t1, t0, {spec.len}")
    else:
        lines += _load("t1", spec.len)
        lines.append("add t1, t0, t1")
    lines += [
        f"csrw smar{k}_lo, t0",
        f"csrw smar{k}_hi, t1",
        f"addi t0, zero, {CFG_BITS[spec.cfg.upper()] | CFG_VALID}",
        f"csrw smar{k}_cfg, t0",
    ]
    return lines


def expand_end_protect(index: int) -> list[str]:
    if not 0 <= index < N_SMAR:
        raise IndexOutOfRange(f"SMAR index {index} outside 0..{N_SMAR - 1}")
    # Invalidate first so no window is ever live with half-cleared bounds.
    return [f"csrw smar{index}_cfg, zero", f"csrw smar{index}_lo, zero",
            f"csrw smar{index}_hi, zero"]


def expand_stack_window(window: int = DEFAULT_STACK_WINDOW) -> list[str]:
    """Grant the callee RW access to ``[sp - window, sp)``."""
    k = STACK_GROUP
    return [
        f"lui t0, %hi({window})",
        f"addi t0, t0, %lo({window})",
        "sub t0, sp, t0",
        f"csrw smar{k}_lo, t0",
        f"csrw smar{k}_hi, sp",
        f"addi t0, zero, {CFG_READ | CFG_WRITE | CFG_VALID}",
        f"csrw smar{k}_cfg, t0",
    ]


def instrument_call(site: CallSiteSpec, site_label: str | None = None) -> list[str]:
    lines: list[str] = []
    for p in site.protects:
        lines += expand_start_protect(p)
    lines += expand_stack_window(site.stack_window)
    if site_label:
        lines.append(f"{site_label}:")
    lines.append(f"jal ra, {site.callee}")
    for p in site.protects:
        lines += expand_end_protect(p.index)
    lines += expand_end_protect(STACK_GROUP)
    return lines


def config_cost(calls: int, protects: int) -> int:
    """CSR writes retired by ``calls`` instrumented calls with ``protects`` specs in total."""
    return PER_CALL * calls + PER_PROTECT * protects


def effective_length(annotation: str, sizes: Mapping[str, int] | None = None) -> int | str:
    """Length of the data an operand refers to.

    Accepts a string literal (its length plus the terminator), a symbol with
    a declared size, or ``len=<expr>``. There is no pointer analysis.
    """
    text = annotation.strip()
    sizes = sizes or {}
    if text.startswith('"'):
        return len(parse_string_literal(text)) + 1
    if text.startswith("len="):
        expr = text[4:].strip()
        try:
            return int(expr, 0)
        except ValueError:
            return expr
    if text in sizes:
        return sizes[text]
    raise UnknownLength(f"no length annotation or declared size for {text!r}")


def parse_string_literal(text: str) -> bytes:
    try:
        value = ast.literal_eval(text.strip())
    except (ValueError, SyntaxError) as e:
        raise MacroError(f"bad string literal {text}") from e
    if not isinstance(value, str):
        raise MacroError(f"bad string literal {text}")
    return value.encode("latin-1")


def check_static_region(site_addr: int, primary_start: int, primary_end: int) -> None:
    if not primary_start <= site_addr < primary_end:
        raise StaticRegionError(
            f"protect macro at {site_addr:#x} lies outside primary range "
            f"[{primary_start:#x}, {primary_end:#x})")
