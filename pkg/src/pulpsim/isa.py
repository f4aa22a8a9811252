"""RV32I subset: instruction model, binary encoding and decoding.

Only the base integer ISA plus ``csrrw``/``csrrs`` is supported. The PULP
configuration registers are reached through those two CSR instructions, so
no custom opcodes exist.

Immediates follow assembler conventions: branch/jump immediates are byte
offsets relative to the instruction, and the ``lui``/``auipc`` immediate is
the 20-bit upper field (0 .. 0xFFFFF).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


MASK32 = 0xFFFFFFFF


class EncodingError(ValueError):
    """Instruction cannot be represented as a 32-bit word."""


class ImmediateOutOfRange(EncodingError):
    def __init__(self, op: str, imm: int, lo: int, hi: int):
        super().__init__(f"{op}: immediate {imm} outside [{lo}, {hi}]")
        self.op = op
        self.imm = imm


class Kind(enum.Enum):
    LUI = "lui"
    AUIPC = "auipc"
    JAL = "jal"
    JALR = "jalr"
    BRANCH = "branch"
    LOAD = "load"
    STORE = "store"
    ALU_IMM = "alu_imm"
    ALU_REG = "alu_reg"
    CSRRW = "csrrw"
    CSRRS = "csrrs"
    ECALL = "ecall"
    EBREAK = "ebreak"


OP_LOAD = 0x03
OP_IMM = 0x13
OP_AUIPC = 0x17
OP_STORE = 0x23
OP_REG = 0x33
OP_LUI = 0x37
OP_BRANCH = 0x63
OP_JALR = 0x67
OP_JAL = 0x6F
OP_SYSTEM = 0x73

# mnemonic -> (kind, funct3, funct7)
ALU_REG_OPS = {
    "add": (0, 0x00), "sub": (0, 0x20), "sll": (1, 0x00), "slt": (2, 0x00),
    "sltu": (3, 0x00), "xor": (4, 0x00), "srl": (5, 0x00), "sra": (5, 0x20),
    "or": (6, 0x00), "and": (7, 0x00),
}
ALU_IMM_OPS = {"addi": 0, "slti": 2, "sltiu": 3, "xori": 4, "ori": 6, "andi": 7}
SHIFT_IMM_OPS = {"slli": (1, 0x00), "srli": (5, 0x00), "srai": (5, 0x20)}
# mnemonic -> (funct3, width, signed)
LOAD_OPS = {
    "lb": (0, 1, True), "lh": (1, 2, True), "lw": (2, 4, True),
    "lbu": (4, 1, False), "lhu": (5, 2, False),
}
STORE_OPS = {"sb": (0, 1), "sh": (1, 2), "sw": (2, 4)}
BRANCH_OPS = {"beq": 0, "bne": 1, "blt": 4, "bge": 5, "bltu": 6, "bgeu": 7}
CSR_OPS = {"csrrw": 1, "csrrs": 2}

_KIND_BY_OP: dict[str, Kind] = {"lui": Kind.LUI, "auipc": Kind.AUIPC, "jal": Kind.JAL,
                                "jalr": Kind.JALR, "ecall": Kind.ECALL, "ebreak": Kind.EBREAK,
                                "csrrw": Kind.CSRRW, "csrrs": Kind.CSRRS}
_KIND_BY_OP.update({op: Kind.ALU_REG for op in ALU_REG_OPS})
_KIND_BY_OP.update({op: Kind.ALU_IMM for op in (*ALU_IMM_OPS, *SHIFT_IMM_OPS)})
_KIND_BY_OP.update({op: Kind.LOAD for op in LOAD_OPS})
_KIND_BY_OP.update({op: Kind.STORE for op in STORE_OPS})
_KIND_BY_OP.update({op: Kind.BRANCH for op in BRANCH_OPS})

MNEMONICS = frozenset(_KIND_BY_OP)

# Which operand fields each kind uses; all others must be zero.
_FIELDS = {
    Kind.LUI: ("rd", "imm"), Kind.AUIPC: ("rd", "imm"), Kind.JAL: ("rd", "imm"),
    Kind.JALR: ("rd", "rs1", "imm"), Kind.BRANCH: ("rs1", "rs2", "imm"),
    Kind.LOAD: ("rd", "rs1", "imm"), Kind.STORE: ("rs1", "rs2", "imm"),
    Kind.ALU_IMM: ("rd", "rs1", "imm"), Kind.ALU_REG: ("rd", "rs1", "rs2"),
    Kind.CSRRW: ("rd", "rs1", "csr"), Kind.CSRRS: ("rd", "rs1", "csr"),
    Kind.ECALL: (), Kind.EBREAK: (),
}

ABI_NAMES = ["zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1",
             "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7",
             "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11",
             "t3", "t4", "t5", "t6"]
REGISTERS: dict[str, int] = {f"x{i}": i for i in range(32)}
REGISTERS.update({name: i for i, name in enumerate(ABI_NAMES)})
REGISTERS["fp"] = 8


def register_index(name: str) -> int:
    """Map ``x7``/``t2``-style names to indices; raises KeyError otherwise."""
    return REGISTERS[name.strip().lower()]


def is_register(text: str) -> bool:
    return text.strip().lower() in REGISTERS


def sign_extend(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value & (1 << (bits - 1)) else value


@dataclass(frozen=True)
class Instruction:
    op: str
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0
    csr: int = 0
    raw: int | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.op not in _KIND_BY_OP:
            raise EncodingError(f"unknown mnemonic {self.op!r}")
        for r in (self.rd, self.rs1, self.rs2):
            if not 0 <= r < 32:
                raise EncodingError(f"register index {r} out of range")

    @property
    def kind(self) -> Kind:
        return _KIND_BY_OP[self.op]

    @property
    def width(self) -> int:
        if self.op in LOAD_OPS:
            return LOAD_OPS[self.op][1]
        if self.op in STORE_OPS:
            return STORE_OPS[self.op][1]
        raise AttributeError(f"{self.op} has no access width")

    @property
    def signed(self) -> bool:
        return LOAD_OPS[self.op][2]

    def __str__(self) -> str:
        k, n = self.kind, ABI_NAMES
        if k in (Kind.LUI, Kind.AUIPC):
            return f"{self.op} {n[self.rd]}, {self.imm:#x}"
        if k is Kind.JAL:
            return f"jal {n[self.rd]}, {self.imm:+d}"
        if k in (Kind.JALR, Kind.LOAD):
            return f"{self.op} {n[self.rd]}, {self.imm}({n[self.rs1]})"
        if k is Kind.STORE:
            return f"{self.op} {n[self.rs2]}, {self.imm}({n[self.rs1]})"
        if k is Kind.BRANCH:
            return f"{self.op} {n[self.rs1]}, {n[self.rs2]}, {self.imm:+d}"
        if k is Kind.ALU_IMM:
            return f"{self.op} {n[self.rd]}, {n[self.rs1]}, {self.imm}"
        if k is Kind.ALU_REG:
            return f"{self.op} {n[self.rd]}, {n[self.rs1]}, {n[self.rs2]}"
        if k in (Kind.CSRRW, Kind.CSRRS):
            return f"{self.op} {n[self.rd]}, {self.csr:#x}, {n[self.rs1]}"
        return self.op


@dataclass(frozen=True)
class Illegal:
    """Decode result for words outside the supported subset."""
    word: int


def _check_range(op: str, imm: int, lo: int, hi: int, align: int = 1) -> None:
    if not lo <= imm <= hi:
        raise ImmediateOutOfRange(op, imm, lo, hi)
    if imm % align:
        raise EncodingError(f"{op}: immediate {imm} not a multiple of {align}")


def encode(i: Instruction) -> int:
    """Pack an instruction into its 32-bit word."""
    kind = i.kind
    for name in ("rd", "rs1", "rs2", "imm", "csr"):
        if name not in _FIELDS[kind] and getattr(i, name):
            raise EncodingError(f"{i.op}: field {name} is unused and must be zero")
    rd, rs1, rs2, imm = i.rd, i.rs1, i.rs2, i.imm

    if kind in (Kind.LUI, Kind.AUIPC):
        _check_range(i.op, imm, 0, 0xFFFFF)
        return (imm << 12) | (rd << 7) | (OP_LUI if kind is Kind.LUI else OP_AUIPC)
    if kind is Kind.JAL:
        _check_range(i.op, imm, -(1 << 20), (1 << 20) - 2, 2)
        u = imm & 0x1FFFFF
        return (((u >> 20) & 1) << 31 | ((u >> 1) & 0x3FF) << 21 | ((u >> 11) & 1) << 20
                | ((u >> 12) & 0xFF) << 12 | rd << 7 | OP_JAL)
    if kind is Kind.BRANCH:
        _check_range(i.op, imm, -4096, 4094, 2)
        u = imm & 0x1FFF
        return (((u >> 12) & 1) << 31 | ((u >> 5) & 0x3F) << 25 | rs2 << 20 | rs1 << 15
                | BRANCH_OPS[i.op] << 12 | ((u >> 1) & 0xF) << 8 | ((u >> 11) & 1) << 7
                | OP_BRANCH)
    if kind is Kind.STORE:
        _check_range(i.op, imm, -2048, 2047)
        u = imm & 0xFFF
        return ((u >> 5) << 25 | rs2 << 20 | rs1 << 15 | STORE_OPS[i.op][0] << 12
                | (u & 0x1F) << 7 | OP_STORE)
    if kind is Kind.ALU_REG:
        f3, f7 = ALU_REG_OPS[i.op]
        return f7 << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | rd << 7 | OP_REG
    if i.op in SHIFT_IMM_OPS:
        _check_range(i.op, imm, 0, 31)
        f3, f7 = SHIFT_IMM_OPS[i.op]
        return f7 << 25 | imm << 20 | rs1 << 15 | f3 << 12 | rd << 7 | OP_IMM
    if kind in (Kind.ALU_IMM, Kind.LOAD, Kind.JALR):
        _check_range(i.op, imm, -2048, 2047)
        if kind is Kind.ALU_IMM:
            f3, opcode = ALU_IMM_OPS[i.op], OP_IMM
        elif kind is Kind.LOAD:
            f3, opcode = LOAD_OPS[i.op][0], OP_LOAD
        else:
            f3, opcode = 0, OP_JALR
        return (imm & 0xFFF) << 20 | rs1 << 15 | f3 << 12 | rd << 7 | opcode
    if kind in (Kind.CSRRW, Kind.CSRRS):
        _check_range(i.op, i.csr, 0, 0xFFF)
        return i.csr << 20 | rs1 << 15 | CSR_OPS[i.op] << 12 | rd << 7 | OP_SYSTEM
    if kind is Kind.ECALL:
        return 0x00000073
    return 0x00100073  # ebreak


_BRANCH_BY_F3 = {v: k for k, v in BRANCH_OPS.items()}
_LOAD_BY_F3 = {v[0]: k for k, v in LOAD_OPS.items()}
_STORE_BY_F3 = {v[0]: k for k, v in STORE_OPS.items()}
_ALU_IMM_BY_F3 = {v: k for k, v in ALU_IMM_OPS.items()}
_ALU_REG_BY_F = {v: k for k, v in ALU_REG_OPS.items()}
_SHIFT_BY_F = {v: k for k, v in SHIFT_IMM_OPS.items()}
_CSR_BY_F3 = {v: k for k, v in CSR_OPS.items()}


def decode(word: int) -> Instruction | Illegal:
    """Decode a word. Non-canonical or unsupported encodings yield :class:`Illegal`."""
    word &= MASK32
    opcode = word & 0x7F
    rd = (word >> 7) & 0x1F
    f3 = (word >> 12) & 7
    rs1 = (word >> 15) & 0x1F
    rs2 = (word >> 20) & 0x1F
    f7 = word >> 25

    op: str | None = None
    fields: dict[str, int] = {}
    if opcode == OP_LUI or opcode == OP_AUIPC:
        op = "lui" if opcode == OP_LUI else "auipc"
        fields = dict(rd=rd, imm=word >> 12)
    elif opcode == OP_JAL:
        imm = ((word >> 31) << 20 | ((word >> 12) & 0xFF) << 12
               | ((word >> 20) & 1) << 11 | ((word >> 21) & 0x3FF) << 1)
        op, fields = "jal", dict(rd=rd, imm=sign_extend(imm, 21))
    elif opcode == OP_JALR and f3 == 0:
        op, fields = "jalr", dict(rd=rd, rs1=rs1, imm=sign_extend(word >> 20, 12))
    elif opcode == OP_BRANCH and f3 in _BRANCH_BY_F3:
        imm = ((word >> 31) << 12 | ((word >> 7) & 1) << 11
               | ((word >> 25) & 0x3F) << 5 | ((word >> 8) & 0xF) << 1)
        op, fields = _BRANCH_BY_F3[f3], dict(rs1=rs1, rs2=rs2, imm=sign_extend(imm, 13))
    elif opcode == OP_LOAD and f3 in _LOAD_BY_F3:
        op, fields = _LOAD_BY_F3[f3], dict(rd=rd, rs1=rs1, imm=sign_extend(word >> 20, 12))
    elif opcode == OP_STORE and f3 in _STORE_BY_F3:
        imm = (f7 << 5) | rd
        op, fields = _STORE_BY_F3[f3], dict(rs1=rs1, rs2=rs2, imm=sign_extend(imm, 12))
    elif opcode == OP_IMM:
        if f3 in _ALU_IMM_BY_F3:
            op, fields = _ALU_IMM_BY_F3[f3], dict(rd=rd, rs1=rs1, imm=sign_extend(word >> 20, 12))
        elif (f3, f7) in _SHIFT_BY_F:
            op, fields = _SHIFT_BY_F[(f3, f7)], dict(rd=rd, rs1=rs1, imm=rs2)
    elif opcode == OP_REG and (f3, f7) in _ALU_REG_BY_F:
        op, fields = _ALU_REG_BY_F[(f3, f7)], dict(rd=rd, rs1=rs1, rs2=rs2)
    elif opcode == OP_SYSTEM:
        if word == 0x00000073:
            op = "ecall"
        elif word == 0x00100073:
            op = "ebreak"
        elif f3 in _CSR_BY_F3:
            op, fields = _CSR_BY_F3[f3], dict(rd=rd, rs1=rs1, csr=word >> 20)

    if op is None:
        return Illegal(word)
    return Instruction(op, raw=word, **fields)
