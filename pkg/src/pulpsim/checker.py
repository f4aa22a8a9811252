"""Execution-time checks: data-access bounds and the RAR call/return protocol.

All functions are pure; the machine applies their results.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .isa import Kind
from .pulpregs import AccessKind, PulpRegisterFile, Region, smar_permits
from .traps import TrapCause, TrapKind


class Transfer(enum.Enum):
    JAL_CALL = "jal"
    JALR_CALL = "jalr"
    BRANCH_TAKEN = "branch"
    SEQUENTIAL = "sequential"


class EffectKind(enum.Enum):
    NO_EFFECT = "none"
    SET_RAR = "set_rar"
    CHECK_RAR = "check_rar"
    VIOLATION = "violation"


@dataclass(frozen=True)
class ControlEffect:
    kind: EffectKind
    address: int | None = None
    cause: TrapKind | None = None


NO_EFFECT = ControlEffect(EffectKind.NO_EFFECT)


@dataclass(frozen=True)
class CheckVerdict:
    cause: TrapCause | None = None

    @property
    def passed(self) -> bool:
        return self.cause is None


PASS = CheckVerdict()


def check_data_access(region: Region, addr: int, size: int, kind: AccessKind,
                      regs: PulpRegisterFile, pc: int = 0) -> CheckVerdict:
    if region is not Region.SECONDARY or smar_permits(regs, addr, size, kind):
        return PASS
    return CheckVerdict(TrapCause(TrapKind.OUT_OF_BOUND_ACCESS, pc, addr=addr, access=kind))


def check_control_transfer(src_region: Region, transfer: Transfer, link: int, target: int,
                           target_region: Region, regs: PulpRegisterFile) -> ControlEffect:
    """Classify a transfer from ``src_region`` to ``target_region``.

    ``link`` is the address after the transferring instruction. Crossings out
    of primary must be calls (they record ``link`` in RAR); any crossing back
    from secondary is treated as a return and must be RAR-checked.
    """
    if src_region is target_region or Region.KERNEL in (src_region, target_region):
        return NO_EFFECT
    if src_region is Region.PRIMARY:
        if transfer in (Transfer.JAL_CALL, Transfer.JALR_CALL):
            return ControlEffect(EffectKind.SET_RAR, address=link)
        return ControlEffect(EffectKind.VIOLATION, address=target,
                             cause=TrapKind.BOUNDARY_VIOLATION)
    return ControlEffect(EffectKind.CHECK_RAR, address=target)


def apply_control_effect(effect: ControlEffect, regs: PulpRegisterFile,
                         pc: int) -> tuple[PulpRegisterFile, TrapCause | None]:
    """Resolve an effect against the register file.

    Returns the updated registers and, on failure, the trap cause (in which
    case the registers are returned unchanged).
    """
    kind = effect.kind
    if kind is EffectKind.NO_EFFECT:
        return regs, None
    if kind is EffectKind.SET_RAR:
        return regs.with_rar(effect.address, True), None
    if kind is EffectKind.CHECK_RAR:
        if regs.rar_valid and effect.address == regs.rar_addr:
            return regs.with_rar(regs.rar_addr, False), None
        expected = regs.rar_addr if regs.rar_valid else None
        return regs, TrapCause(TrapKind.RETURN_ADDRESS_ERROR, pc, target=effect.address,
                               expected=expected)
    return regs, TrapCause(effect.cause, pc, target=effect.address)


_CONTROL_KINDS = frozenset({Kind.JAL, Kind.JALR, Kind.BRANCH})


def needs_check(region: Region, instr_kind: Kind, crosses_boundary: bool = False) -> bool:
    """Whether the instruction engages PULP hardware (drives ``checks_performed``)."""
    if region is Region.KERNEL:
        return False
    if region is Region.SECONDARY and instr_kind in (Kind.LOAD, Kind.STORE):
        return True
    return crosses_boundary
