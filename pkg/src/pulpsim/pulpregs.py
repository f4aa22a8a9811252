"""PULP register file: PPCR, SMAR groups and RAR.

Registers live in a custom CSR block::

    0x7C0          ppcr_lo
    0x7C1          ppcr_hi
    0x7C2 + 3k     smar{k}_lo
    0x7C3 + 3k     smar{k}_hi
    0x7C4 + 3k     smar{k}_cfg   bit0 read, bit1 write, bit2 valid
    0x7E0          rar           read-only; address | valid in bit 0

The register file is immutable; writes return a new value.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace


N_SMAR = 8

CSR_PPCR_LO = 0x7C0
CSR_PPCR_HI = 0x7C1
CSR_SMAR_BASE = 0x7C2
CSR_RAR = 0x7E0

CFG_READ = 0x1
CFG_WRITE = 0x2
CFG_VALID = 0x4


class Privilege(enum.Enum):
    USER = "user"
    KERNEL = "kernel"


class Region(enum.Enum):
    KERNEL = "kernel"
    PRIMARY = "primary"
    SECONDARY = "secondary"


class AccessKind(enum.Enum):
    READ = "read"
    WRITE = "write"


class PulpConfigViolation(Exception):
    def __init__(self, csr_id: int, region: Region):
        super().__init__(f"write to {csr_name(csr_id)} not permitted from {region.value} region")
        self.csr_id = csr_id
        self.region = region


class UnknownCsr(KeyError):
    def __init__(self, csr_id: int):
        super().__init__(csr_id)
        self.csr_id = csr_id

    def __str__(self) -> str:
        return f"unknown CSR {self.csr_id:#05x}"


def smar_csr(index: int, field: str) -> int:
    """CSR address of ``smar{index}_{field}`` where field is lo, hi or cfg."""
    if not 0 <= index < N_SMAR:
        raise IndexError(f"SMAR index {index} outside 0..{N_SMAR - 1}")
    return CSR_SMAR_BASE + 3 * index + ("lo", "hi", "cfg").index(field)


CSR_NAMES: dict[str, int] = {"ppcr_lo": CSR_PPCR_LO, "ppcr_hi": CSR_PPCR_HI, "rar": CSR_RAR}
for _k in range(N_SMAR):
    for _f in ("lo", "hi", "cfg"):
        CSR_NAMES[f"smar{_k}_{_f}"] = smar_csr(_k, _f)
_NAME_BY_CSR = {v: k for k, v in CSR_NAMES.items()}


def is_pulp_csr(csr_id: int) -> bool:
    return csr_id in _NAME_BY_CSR


def csr_name(csr_id: int) -> str:
    return _NAME_BY_CSR.get(csr_id, f"{csr_id:#05x}")


@dataclass(frozen=True)
class SmarGroup:
    start: int = 0
    end: int = 0
    read: bool = False
    write: bool = False
    valid: bool = False

    @property
    def cfg(self) -> int:
        return ((CFG_READ if self.read else 0) | (CFG_WRITE if self.write else 0)
                | (CFG_VALID if self.valid else 0))

    def permits(self, kind: AccessKind) -> bool:
        return self.read if kind is AccessKind.READ else self.write


@dataclass(frozen=True)
class PulpRegisterFile:
    ppcr_start: int = 0
    ppcr_end: int = 0
    smar: tuple[SmarGroup, ...] = (SmarGroup(),) * N_SMAR
    rar_addr: int = 0
    rar_valid: bool = False

    def with_rar(self, addr: int, valid: bool) -> PulpRegisterFile:
        return replace(self, rar_addr=addr & 0xFFFFFFFF, rar_valid=valid)

    def snapshot(self) -> dict:
        return {
            "ppcr": [self.ppcr_start, self.ppcr_end],
            "smar": [[g.start, g.end, g.cfg] for g in self.smar],
            "rar": {"addr": self.rar_addr, "valid": self.rar_valid},
        }


def classify_region(pc: int, privilege: Privilege, regs: PulpRegisterFile) -> Region:
    if privilege is Privilege.KERNEL:
        return Region.KERNEL
    if regs.ppcr_start <= pc < regs.ppcr_end:
        return Region.PRIMARY
    return Region.SECONDARY


def smar_permits(regs: PulpRegisterFile, addr: int, size: int, kind: AccessKind) -> bool:
    """True iff one valid group contains the whole access and allows ``kind``.

    Accesses straddling two adjacent groups are rejected.
    """
    last = addr + size
    for g in regs.smar:
        if g.valid and g.start <= addr and last <= g.end and g.permits(kind):
            return True
    return False


def pulp_csr_write(regs: PulpRegisterFile, csr_id: int, value: int,
                   region: Region) -> PulpRegisterFile:
    """Apply a software write, enforcing who may configure what.

    PPCR is kernel-only, SMAR is primary-or-kernel, RAR is never writable.
    """
    if not is_pulp_csr(csr_id):
        raise UnknownCsr(csr_id)
    value &= 0xFFFFFFFF
    if csr_id == CSR_RAR:
        raise PulpConfigViolation(csr_id, region)
    if csr_id in (CSR_PPCR_LO, CSR_PPCR_HI):
        if region is not Region.KERNEL:
            raise PulpConfigViolation(csr_id, region)
        if csr_id == CSR_PPCR_LO:
            return replace(regs, ppcr_start=value)
        return replace(regs, ppcr_end=value)
    if region is Region.SECONDARY:
        raise PulpConfigViolation(csr_id, region)
    index, slot = divmod(csr_id - CSR_SMAR_BASE, 3)
    g = regs.smar[index]
    if slot == 0:
        g = replace(g, start=value)
    elif slot == 1:
        g = replace(g, end=value)
    else:
        g = replace(g, read=bool(value & CFG_READ), write=bool(value & CFG_WRITE),
                    valid=bool(value & CFG_VALID))
    smar = regs.smar[:index] + (g,) + regs.smar[index + 1:]
    return replace(regs, smar=smar)


def pulp_csr_read(regs: PulpRegisterFile, csr_id: int, region: Region) -> int:
    # Reads are permitted from every region.
    if csr_id == CSR_PPCR_LO:
        return regs.ppcr_start
    if csr_id == CSR_PPCR_HI:
        return regs.ppcr_end
    if csr_id == CSR_RAR:
        return regs.rar_addr | int(regs.rar_valid)
    if not is_pulp_csr(csr_id):
        raise UnknownCsr(csr_id)
    index, slot = divmod(csr_id - CSR_SMAR_BASE, 3)
    g = regs.smar[index]
    return (g.start, g.end, g.cfg)[slot]
