"""Two-pass assembler for the RV32I subset plus PULP directives and macros.

Source syntax is GNU-flavoured::

    .org 0x1000
    .primary_start
    _start:
        la   a0, msg
        %protect_call puts, (a0, len=6, R, 0)
        li   a7, 93
        ecall
    .primary_end
    puts:   ...
    msg:    .asciz "hello"

Directives: ``.org .align .word .half .byte .ascii .asciz .string .space
.zero .equ .set .entry .primary_start .primary_end`` (``.globl .text
.data`` are accepted and ignored). Macros: ``%start_protect(addr, len, cfg,
index)``, ``%end_protect(index)`` and ``%protect_call callee, (addr, len,
cfg, index)...[, stack=N]``. A ``len`` of ``auto`` takes the declared size
of the ``addr`` symbol.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from . import image as _image
from . import runtime
from .image import ProgramImage
from .isa import (ALU_IMM_OPS, ALU_REG_OPS, BRANCH_OPS, CSR_OPS, LOAD_OPS, MNEMONICS,
                  SHIFT_IMM_OPS, STORE_OPS, EncodingError, Instruction, encode,
                  is_register, register_index, sign_extend)
from .pulpregs import CSR_NAMES

STANDARD_CSRS = {"cycle": 0xC00, "time": 0xC01, "instret": 0xC02,
                 "cycleh": 0xC80, "timeh": 0xC81, "instreth": 0xC82}
ALL_CSR_NAMES = {**CSR_NAMES, **STANDARD_CSRS}


class AsmError(Exception):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


class AsmSyntaxError(AsmError):
    pass


class UnresolvedLabel(AsmError):
    def __init__(self, name: str, line: int | None = None):
        super().__init__(f"unresolved label {name!r}", line)
        self.name = name


class MissingPrimaryRange(AsmError):
    pass


class OverlappingSegments(AsmError, _image.OverlappingSegments):
    pass


# ---------------------------------------------------------------- expressions

_TOKEN = re.compile(r"""\s*(?:
    (?P<num>0[xX][0-9a-fA-F_]+|0[bB][01_]+|\d+)
  | (?P<chr>'(?:\\.|[^'\\])')
  | (?P<rel>%(?:hi|lo))
  | (?P<name>[A-Za-z_.$][\w.$]*)
  | (?P<op><<|>>|[-+*/()&|^~]))""", re.X)


def _tokenize(text: str) -> list[tuple[str, str]]:
    out, pos, text = [], 0, text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise AsmSyntaxError(f"bad expression {text!r}")
        out.append((m.lastgroup, m.group(m.lastgroup)))
        pos = m.end()
    return out


def hi20(v: int) -> int:
    return ((v + 0x800) >> 12) & 0xFFFFF


def lo12(v: int) -> int:
    return sign_extend(v & 0xFFF, 12)


class _Parser:
    def __init__(self, text: str, env: Mapping[str, int], line: int | None):
        self.toks = _tokenize(text)
        self.i = 0
        self.env = env
        self.line = line
        self.text = text

    def peek(self) -> str | None:
        return self.toks[self.i][1] if self.i < len(self.toks) else None

    def take(self) -> tuple[str, str]:
        if self.i >= len(self.toks):
            raise AsmSyntaxError(f"unexpected end of expression {self.text!r}", self.line)
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def parse(self) -> int:
        v = self.binary(0)
        if self.i != len(self.toks):
            raise AsmSyntaxError(f"trailing input in expression {self.text!r}", self.line)
        return v

    _LEVELS = (("|",), ("^",), ("&",), ("<<", ">>"), ("+", "-"), ("*", "/"))

    def binary(self, level: int) -> int:
        if level == len(self._LEVELS):
            return self.unary()
        v = self.binary(level + 1)
        while self.peek() in self._LEVELS[level]:
            op = self.take()[1]
            rhs = self.binary(level + 1)
            if op == "+": v += rhs
            elif op == "-": v -= rhs
            elif op == "*": v *= rhs
            elif op == "/":
                if rhs == 0:
                    raise AsmSyntaxError("division by zero", self.line)
                v = int(v / rhs)
            elif op == "&": v &= rhs
            elif op == "|": v |= rhs
            elif op == "^": v ^= rhs
            elif op == "<<": v <<= rhs
            else: v >>= rhs
        return v

    def unary(self) -> int:
        kind, tok = self.take()
        if tok == "-":
            return -self.unary()
        if tok == "+":
            return self.unary()
        if tok == "~":
            return ~self.unary()
        if tok == "(":
            v = self.binary(0)
            if self.take()[1] != ")":
                raise AsmSyntaxError(f"missing ')' in {self.text!r}", self.line)
            return v
        if kind == "num":
            return int(tok.replace("_", ""), 0)
        if kind == "chr":
            body = tok[1:-1]
            return ord(body.encode().decode("unicode_escape")) if body.startswith("\\") else ord(body)
        if kind == "rel":
            if self.take()[1] != "(":
                raise AsmSyntaxError(f"{tok} needs parentheses", self.line)
            v = self.binary(0)
            if self.take()[1] != ")":
                raise AsmSyntaxError(f"missing ')' in {self.text!r}", self.line)
            return hi20(v) if tok == "%hi" else lo12(v)
        if kind == "name":
            if tok not in self.env:
                raise UnresolvedLabel(tok, self.line)
            return self.env[tok]
        raise AsmSyntaxError(f"unexpected {tok!r} in {self.text!r}", self.line)


def evaluate(text: str, env: Mapping[str, int], line: int | None = None) -> int:
    """Evaluate an assembler expression against a symbol environment."""
    return _Parser(text, env, line).parse()


def _has_symbols(text: str) -> bool:
    return any(kind == "name" for kind, _ in _tokenize(text))


# ---------------------------------------------------------------- source parsing

@dataclass
class Stmt:
    line: int
    op: str
    args: list[str]
    labels: list[str] = field(default_factory=list)
    macro_site: bool = False
    addr: int = 0


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == "\\":
                continue
            if ch == quote and line[i - 1] != "\\":
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch in "#;":
            return line[:i]
        elif ch == "/" and line[i:i + 2] == "//":
            return line[:i]
    return line


def split_operands(text: str) -> list[str]:
    parts, depth, quote, cur = [], 0, None, []
    for i, ch in enumerate(text):
        if quote:
            cur.append(ch)
            if ch == quote and text[i - 1] != "\\":
                quote = None
            continue
        if ch in "\"'":
            quote = ch
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
            continue
        cur.append(ch)
    tail = "".join(cur).strip()
    if tail or parts:
        parts.append(tail)
    return parts


_LABEL = re.compile(r"\s*([A-Za-z_.$][\w.$]*)\s*:(?!=)")


def _parse_lines(source: str) -> list[Stmt]:
    stmts: list[Stmt] = []
    pending: list[str] = []
    for n, raw in enumerate(source.splitlines(), 1):
        text = _strip_comment(raw).strip()
        while True:
            m = _LABEL.match(text)
            if not m:
                break
            pending.append(m.group(1))
            text = text[m.end():].strip()
        if not text:
            continue
        if text.startswith("%"):
            m = re.match(r"%(\w+)\s*(.*)$", text)
            name, rest = "%" + m.group(1), m.group(2).strip()
            if rest.startswith("(") and name != "%protect_call":
                if not rest.endswith(")"):
                    raise AsmSyntaxError(f"unbalanced parentheses in {text!r}", n)
                rest = rest[1:-1]
            stmts.append(Stmt(n, name, split_operands(rest), pending))
        else:
            parts = text.split(None, 1)
            op = parts[0].lower()
            args = split_operands(parts[1]) if len(parts) > 1 else []
            stmts.append(Stmt(n, op, args, pending))
        pending = []
    if pending:
        stmts.append(Stmt(0, ".label_only", [], pending))
    return stmts


_DATA_DIRECTIVES = {".word": 4, ".half": 2, ".byte": 1}
_IGNORED = {".globl", ".global", ".text", ".data", ".section"}


def _string_arg(stmt: Stmt) -> bytes:
    if len(stmt.args) != 1 or not stmt.args[0].startswith('"'):
        raise AsmSyntaxError(f"{stmt.op} needs one string literal", stmt.line)
    try:
        return runtime.parse_string_literal(stmt.args[0])
    except runtime.MacroError as e:
        raise AsmSyntaxError(str(e), stmt.line) from None


def _declared_sizes(stmts: list[Stmt], consts: dict[str, int]) -> dict[str, int]:
    """Size of the data item directly following each label."""
    sizes: dict[str, int] = {}
    env = dict(consts)
    for s in stmts:
        if s.op in (".equ", ".set") and len(s.args) == 2 and s.args[0] not in consts:
            try:
                env[s.args[0]] = evaluate(s.args[1], env, s.line)
            except AsmError:
                pass
        size = None
        if s.op in (".asciz", ".string"):
            size = len(_string_arg(s)) + 1
        elif s.op == ".ascii":
            size = len(_string_arg(s))
        elif s.op in (".space", ".zero") and s.args:
            try:
                size = evaluate(s.args[0], env, s.line)
            except AsmError:
                size = None
        elif s.op in _DATA_DIRECTIVES:
            size = _DATA_DIRECTIVES[s.op] * len(s.args)
        if size is not None:
            for label in s.labels:
                sizes[label] = size
    return sizes


# ---------------------------------------------------------------- expansion

def _parse_protect(text: str, sizes: dict[str, int], line: int) -> runtime.ProtectSpec:
    text = text.strip()
    if not (text.startswith("(") and text.endswith(")")):
        raise AsmSyntaxError(f"protect spec must be parenthesised: {text!r}", line)
    fields = split_operands(text[1:-1])
    if len(fields) != 4:
        raise AsmSyntaxError(f"protect spec needs (addr, len, cfg, index): {text!r}", line)
    return _make_protect(fields, sizes, line)


def _make_protect(fields: list[str], sizes: dict[str, int], line: int) -> runtime.ProtectSpec:
    addr, length, cfg, index = fields
    try:
        if length == "auto":
            length = runtime.effective_length(addr, sizes)
        elif length.startswith(("len=", '"')):
            length = runtime.effective_length(length, sizes)
        else:
            try:
                length = int(length, 0)
            except ValueError:
                pass
        return runtime.ProtectSpec(addr, length, cfg, evaluate(index, {}, line))
    except runtime.MacroError as e:
        raise type(e)(f"line {line}: {e}") from e


def _expand_pseudo(s: Stmt, consts: dict[str, int]) -> list[tuple[str, list[str]]]:
    op, a = s.op, s.args

    def need(n: int):
        if len(a) != n:
            raise AsmSyntaxError(f"{op} expects {n} operands, got {len(a)}", s.line)

    if op == "nop":
        need(0)
        return [("addi", ["zero", "zero", "0"])]
    if op == "li":
        need(2)
        try:
            v = evaluate(a[1], consts, s.line)
        except AsmError:
            v = None
        if v is not None:
            if not -(1 << 31) <= v <= 0xFFFFFFFF:
                raise AsmSyntaxError(f"li value {v} does not fit in 32 bits", s.line)
            v = sign_extend(v, 32)
            if -2048 <= v < 2048:
                return [("addi", [a[0], "zero", str(v)])]
            if lo12(v) == 0:
                return [("lui", [a[0], str(hi20(v))])]
        return [("lui", [a[0], f"%hi({a[1]})"]), ("addi", [a[0], a[0], f"%lo({a[1]})"])]
    if op == "la":
        need(2)
        return [("lui", [a[0], f"%hi({a[1]})"]), ("addi", [a[0], a[0], f"%lo({a[1]})"])]
    simple = {
        "mv": lambda: ("addi", [a[0], a[1], "0"]),
        "not": lambda: ("xori", [a[0], a[1], "-1"]),
        "neg": lambda: ("sub", [a[0], "zero", a[1]]),
        "seqz": lambda: ("sltiu", [a[0], a[1], "1"]),
        "snez": lambda: ("sltu", [a[0], "zero", a[1]]),
        "beqz": lambda: ("beq", [a[0], "zero", a[1]]),
        "bnez": lambda: ("bne", [a[0], "zero", a[1]]),
        "blez": lambda: ("bge", ["zero", a[0], a[1]]),
        "bgez": lambda: ("bge", [a[0], "zero", a[1]]),
        "bltz": lambda: ("blt", [a[0], "zero", a[1]]),
        "bgtz": lambda: ("blt", ["zero", a[0], a[1]]),
        "csrr": lambda: ("csrrs", [a[0], a[1], "zero"]),
        "csrw": lambda: ("csrrw", ["zero", a[0], a[1]]),
        "csrs": lambda: ("csrrs", ["zero", a[0], a[1]]),
    }
    if op in simple:
        need(2)
        return [simple[op]()]
    swapped = {"bgt": "blt", "ble": "bge", "bgtu": "bltu", "bleu": "bgeu"}
    if op in swapped:
        need(3)
        return [(swapped[op], [a[1], a[0], a[2]])]
    if op in ("j", "call") or (op == "jal" and len(a) == 1):
        need(1)
        return [("jal", ["zero" if op == "j" else "ra", a[0]])]
    if op == "jr" or (op == "jalr" and len(a) == 1):
        need(1)
        return [("jalr", ["zero" if op == "jr" else "ra", f"0({a[0]})"])]
    if op == "ret":
        need(0)
        return [("jalr", ["zero", "0(ra)"])]
    return [(op, a)]


class _Expander:
    def __init__(self, sizes: dict[str, int], consts: dict[str, int]):
        self.sizes = sizes
        self.consts = consts
        self.counts = {"call": 0, "start": 0, "end": 0}
        self.out: list[Stmt] = []

    def emit_lines(self, lines: list[str], s: Stmt, labels: list[str]) -> None:
        first = True
        for text in lines:
            if text.endswith(":"):
                labels = labels + [text[:-1]]
                continue
            parts = text.split(None, 1)
            sub = Stmt(s.line, parts[0], split_operands(parts[1]) if len(parts) > 1 else [],
                       labels, macro_site=first)
            first = False
            labels = []
            self.emit(sub)

    def emit(self, s: Stmt) -> None:
        if s.op.startswith("."):
            self.out.append(s)
            return
        if s.op.startswith("%"):
            self.macro(s)
            return
        expanded = _expand_pseudo(s, self.consts)
        for i, (op, args) in enumerate(expanded):
            if op not in MNEMONICS:
                raise AsmSyntaxError(f"unknown instruction {op!r}", s.line)
            self.out.append(Stmt(s.line, op, args, s.labels if i == 0 else [],
                                 macro_site=s.macro_site and i == 0))

    def macro(self, s: Stmt) -> None:
        try:
            if s.op == "%start_protect":
                if len(s.args) != 4:
                    raise AsmSyntaxError("%start_protect needs (addr, len, cfg, index)", s.line)
                spec = _make_protect(s.args, self.sizes, s.line)
                label = f"__pstart{self.counts['start']}"
                self.counts["start"] += 1
                self.emit_lines(runtime.expand_start_protect(spec), s, s.labels + [label])
            elif s.op == "%end_protect":
                if len(s.args) != 1:
                    raise AsmSyntaxError("%end_protect needs (index)", s.line)
                label = f"__pend{self.counts['end']}"
                self.counts["end"] += 1
                lines = runtime.expand_end_protect(evaluate(s.args[0], self.consts, s.line))
                self.emit_lines(lines, s, s.labels + [label])
            elif s.op == "%protect_call":
                if not s.args:
                    raise AsmSyntaxError("%protect_call needs a callee", s.line)
                callee, protects, window = s.args[0], [], runtime.DEFAULT_STACK_WINDOW
                for arg in s.args[1:]:
                    if arg.startswith("stack="):
                        window = evaluate(arg[6:], self.consts, s.line)
                    else:
                        protects.append(_parse_protect(arg, self.sizes, s.line))
                site = runtime.CallSiteSpec(callee, tuple(protects), window)
                label = f"__pcall{self.counts['call']}_p{len(protects)}"
                self.counts["call"] += 1
                self.emit_lines(runtime.instrument_call(site, label), s, s.labels)
            else:
                raise AsmSyntaxError(f"unknown macro {s.op}", s.line)
        except runtime.MacroError as e:
            if "line " in str(e):
                raise
            raise type(e)(f"line {s.line}: {e}") from e


# ---------------------------------------------------------------- encoding

def _reg(text: str, line: int) -> int:
    try:
        return register_index(text)
    except KeyError:
        raise AsmSyntaxError(f"bad register {text!r}", line) from None


_MEM = re.compile(r"^(.*)\(\s*([\w$]+)\s*\)$")


def _mem_operand(text: str, line: int) -> tuple[str, int]:
    m = _MEM.match(text.strip())
    if not m:
        raise AsmSyntaxError(f"expected offset(register), got {text!r}", line)
    return (m.group(1).strip() or "0"), _reg(m.group(2), line)


def _csr(text: str, env: Mapping[str, int], line: int) -> int:
    name = text.strip().lower()
    if name in ALL_CSR_NAMES:
        return ALL_CSR_NAMES[name]
    return evaluate(text, env, line)


def _encode_stmt(s: Stmt, env: dict[str, int]) -> int:
    op, a, line = s.op, s.args, s.line

    def need(n: int):
        if len(a) != n:
            raise AsmSyntaxError(f"{op} expects {n} operands, got {len(a)}", line)

    def ev(text: str) -> int:
        return evaluate(text, env, line)

    def target(text: str) -> int:
        return ev(text) if not _has_symbols(text) else ev(text) - s.addr

    if op in ALU_REG_OPS:
        need(3)
        instr = Instruction(op, rd=_reg(a[0], line), rs1=_reg(a[1], line), rs2=_reg(a[2], line))
    elif op in ALU_IMM_OPS or op in SHIFT_IMM_OPS:
        need(3)
        instr = Instruction(op, rd=_reg(a[0], line), rs1=_reg(a[1], line), imm=ev(a[2]))
    elif op in LOAD_OPS:
        need(2)
        off, base = _mem_operand(a[1], line)
        instr = Instruction(op, rd=_reg(a[0], line), rs1=base, imm=ev(off))
    elif op in STORE_OPS:
        need(2)
        off, base = _mem_operand(a[1], line)
        instr = Instruction(op, rs2=_reg(a[0], line), rs1=base, imm=ev(off))
    elif op in BRANCH_OPS:
        need(3)
        instr = Instruction(op, rs1=_reg(a[0], line), rs2=_reg(a[1], line), imm=target(a[2]))
    elif op == "jal":
        need(2)
        instr = Instruction(op, rd=_reg(a[0], line), imm=target(a[1]))
    elif op == "jalr":
        if len(a) == 2:
            off, base = _mem_operand(a[1], line)
        elif len(a) == 3:
            base, off = _reg(a[1], line), a[2]
        else:
            raise AsmSyntaxError("jalr expects rd, off(rs1)", line)
        instr = Instruction(op, rd=_reg(a[0], line), rs1=base, imm=ev(off))
    elif op in ("lui", "auipc"):
        need(2)
        v = ev(a[1])
        if not 0 <= v <= 0xFFFFF:
            raise AsmError(f"{op}: immediate {v:#x} outside 20 bits", line)
        instr = Instruction(op, rd=_reg(a[0], line), imm=v)
    elif op in CSR_OPS:
        need(3)
        instr = Instruction(op, rd=_reg(a[0], line), csr=_csr(a[1], env, line),
                            rs1=_reg(a[2], line))
    elif op in ("ecall", "ebreak"):
        need(0)
        instr = Instruction(op)
    else:
        raise AsmSyntaxError(f"unknown instruction {op!r}", line)
    return encode(instr)


def _layout_size(s: Stmt, env: dict[str, int], addr: int) -> int:
    op = s.op
    if op in MNEMONICS:
        return 4
    if op in _DATA_DIRECTIVES:
        return _DATA_DIRECTIVES[op] * len(s.args)
    if op in (".asciz", ".string"):
        return len(_string_arg(s)) + 1
    if op == ".ascii":
        return len(_string_arg(s))
    if op in (".space", ".zero"):
        if not 1 <= len(s.args) <= 2:
            raise AsmSyntaxError(f"{op} needs size[, fill]", s.line)
        n = evaluate(s.args[0], env, s.line)
        if n < 0:
            raise AsmSyntaxError(f"negative {op} size", s.line)
        return n
    if op == ".align":
        align = 1 << evaluate(s.args[0], env, s.line)
        return (-addr) % align
    return 0


def _emit_data(s: Stmt, env: dict[str, int], size: int) -> bytes:
    op = s.op
    if op in _DATA_DIRECTIVES:
        width = _DATA_DIRECTIVES[op]
        out = bytearray()
        for text in s.args:
            v = evaluate(text, env, s.line)
            if not -(1 << (8 * width - 1)) <= v < (1 << (8 * width)):
                raise AsmError(f"{op} value {v} does not fit in {width} bytes", s.line)
            out += (v & ((1 << (8 * width)) - 1)).to_bytes(width, "little")
        return bytes(out)
    if op in (".asciz", ".string"):
        return _string_arg(s) + b"\0"
    if op == ".ascii":
        return _string_arg(s)
    if op in (".space", ".zero"):
        fill = evaluate(s.args[1], env, s.line) & 0xFF if len(s.args) > 1 else 0
        return bytes([fill]) * size
    return bytes(size)


def assemble(source: str, defines: Mapping[str, int] | None = None) -> ProgramImage:
    """Assemble source text into a :class:`ProgramImage`."""
    defines = dict(defines or {})
    consts = dict(defines)
    stmts = _parse_lines(source)
    sizes = _declared_sizes(stmts, consts)

    # Constants that are known before layout let ``li`` pick its short form.
    early = dict(consts)
    for s in stmts:
        if s.op in (".equ", ".set") and len(s.args) == 2 and s.args[0] not in consts:
            try:
                early[s.args[0]] = evaluate(s.args[1], early, s.line)
            except AsmError:
                pass
    expander = _Expander(sizes, early)
    for s in stmts:
        expander.emit(s)
    stmts = expander.out

    # Pass 1: addresses.
    env: dict[str, int] = dict(consts)
    labels: dict[str, int] = {}
    segments: list[list] = []   # [base, [stmts], size]
    addr = 0
    cur = None
    marks: dict[str, tuple[str, int, int]] = {}
    for s in stmts:
        if s.op == ".org":
            if len(s.args) != 1:
                raise AsmSyntaxError(".org needs an address", s.line)
            addr = evaluate(s.args[0], env, s.line)
            cur = None
        for label in s.labels:
            if label in labels or label in env:
                raise AsmSyntaxError(f"duplicate symbol {label!r}", s.line)
            labels[label] = env[label] = addr
        if s.op in (".org", ".label_only") or s.op in _IGNORED:
            continue
        if s.op in (".equ", ".set"):
            if len(s.args) != 2:
                raise AsmSyntaxError(f"{s.op} needs name, value", s.line)
            if s.args[0] not in defines:
                env[s.args[0]] = evaluate(s.args[1], {**env, ".": addr}, s.line)
            continue
        if s.op in (".entry", ".primary_start", ".primary_end"):
            if s.op in marks:
                raise AsmSyntaxError(f"duplicate {s.op}", s.line)
            marks[s.op] = (s.args[0] if s.args else ".", addr, s.line)
            continue
        if s.op.startswith(".") and s.op not in _DATA_DIRECTIVES and s.op not in (
                ".asciz", ".string", ".ascii", ".space", ".zero", ".align"):
            raise AsmSyntaxError(f"unknown directive {s.op}", s.line)
        if s.op in MNEMONICS and addr % 4:
            raise AsmSyntaxError(f"instruction at misaligned address {addr:#x}", s.line)
        s.addr = addr
        size = _layout_size(s, env, addr)
        if cur is None:
            cur = [addr, [], 0]
            segments.append(cur)
        cur[1].append((s, size))
        cur[2] += size
        addr += size

    def mark(name: str) -> int:
        expr, at, line = marks[name]
        return evaluate(expr, {**env, ".": at}, line)

    for name in (".primary_start", ".primary_end"):
        if name not in marks:
            raise MissingPrimaryRange(f"source has no {name} directive")
    primary_start, primary_end = mark(".primary_start"), mark(".primary_end")
    if not primary_start < primary_end or primary_start % 4 or primary_end % 4:
        raise AsmError(f"bad primary range [{primary_start:#x}, {primary_end:#x})")

    # Pass 2: bytes.
    out_segments: list[tuple[int, bytes]] = []
    for base, items, _ in segments:
        blob = bytearray()
        for s, size in items:
            if s.macro_site:
                try:
                    runtime.check_static_region(s.addr, primary_start, primary_end)
                except runtime.StaticRegionError as e:
                    raise runtime.StaticRegionError(f"line {s.line}: {e}") from e
            if s.op in MNEMONICS:
                try:
                    word = _encode_stmt(s, {**env, ".": s.addr})
                except EncodingError as e:
                    raise AsmError(str(e), s.line) from e
                blob += word.to_bytes(4, "little")
            else:
                blob += _emit_data(s, {**env, ".": s.addr}, size)
        if blob:
            out_segments.append((base, bytes(blob)))

    spans = sorted((b, b + len(d)) for b, d in out_segments)
    for (_, end_a), (base_b, _) in zip(spans, spans[1:]):
        if base_b < end_a:
            raise OverlappingSegments(f"segment at {base_b:#x} overlaps previous segment")

    if ".entry" in marks:
        entry = mark(".entry")
    else:
        entry = labels.get("_start", primary_start)
    img = ProgramImage(entry, primary_start, primary_end, out_segments, dict(labels))
    try:
        img.validate()
    except _image.ImageError as e:
        raise AsmError(str(e)) from e
    return img


def assemble_file(path: str | Path, defines: Mapping[str, int] | None = None) -> ProgramImage:
    return assemble(Path(path).read_text(encoding="utf-8"), defines)
