from __future__ import annotations

import enum
from dataclasses import dataclass

from .pulpregs import AccessKind


class TrapKind(enum.Enum):
    OUT_OF_BOUND_ACCESS = "out_of_bound_access"
    RETURN_ADDRESS_ERROR = "return_address_error"
    PULP_CONFIG_VIOLATION = "pulp_config_violation"
    BOUNDARY_VIOLATION = "boundary_violation"
    ILLEGAL_INSTRUCTION = "illegal_instruction"
    MISALIGNED_ACCESS = "misaligned_access"
    MEM_FAULT = "mem_fault"
    UNKNOWN_SYSCALL = "unknown_syscall"
    BREAKPOINT = "breakpoint"


@dataclass(frozen=True)
class TrapCause:
    """Why execution stopped. ``pc`` is always the faulting instruction."""

    kind: TrapKind
    pc: int
    addr: int | None = None
    access: AccessKind | None = None
    target: int | None = None
    expected: int | None = None
    csr_id: int | None = None
    word: int | None = None
    number: int | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "pc": self.pc}
        for name in ("addr", "target", "expected", "csr_id", "word", "number"):
            v = getattr(self, name)
            if v is not None:
                d[name] = v
        if self.access is not None:
            d["access"] = self.access.value
        return d

    def __str__(self) -> str:
        parts = [self.kind.value, f"pc={self.pc:#010x}"]
        for name in ("addr", "target", "expected", "csr_id", "word"):
            v = getattr(self, name)
            if v is not None:
                parts.append(f"{name}={v:#x}")
        if self.access is not None:
            parts.append(f"access={self.access.value}")
        if self.number is not None:
            parts.append(f"number={self.number}")
        return " ".join(parts)


class Trap(Exception):
    """Raised inside the executor; carries the cause to the run loop."""

    def __init__(self, cause: TrapCause):
        super().__init__(str(cause))
        self.cause = cause
