"""Regenerate the frozen files under tests/data.

clang_words.json   reference encodings from clang's RISC-V assembler
exit0.img          golden image of the smallest corpus program
checker_golden.json  regression vectors for the pure check functions

    python scripts/gen_golden.py [--skip-clang]
"""

import argparse
import itertools
import json
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from pulpsim.assembler import assemble_file  # noqa: E402
from pulpsim.checker import Transfer, check_control_transfer, check_data_access  # noqa: E402
from pulpsim.corpus.harness import HERE as CORPUS  # noqa: E402
from pulpsim.pulpregs import (AccessKind, PulpRegisterFile, Region, SmarGroup)  # noqa: E402

DATA = ROOT / "tests" / "data"

ORACLE_LINES = [
    "addi x0, x0, 0", "addi a0, a1, -2048", "addi t6, s11, 2047", "slti a2, a3, -1",
    "sltiu a4, a5, 7", "xori s0, s1, 0x555", "ori sp, gp, -256", "andi tp, t0, 255",
    "slli a0, a0, 31", "srli a1, a2, 1", "srai a3, a4, 17",
    "add a0, a1, a2", "sub t0, t1, t2", "sll s2, s3, s4", "slt s5, s6, s7", "sltu s8, s9, s10",
    "xor x31, x30, x29", "srl ra, sp, gp", "sra a7, a6, a5", "or t3, t4, t5", "and zero, ra, ra",
    "lui a0, 0xfffff", "lui t0, 0", "lui s0, 0x12345", "auipc a1, 0x12", "auipc ra, 0x80000",
    "lb a0, -1(sp)", "lh a1, 2(s0)", "lw t0, 12(sp)", "lbu t1, 2047(a0)", "lhu t2, -2048(a1)",
    "sb a0, 0(a1)", "sh s1, -2(sp)", "sw t1, -4(s0)", "sw ra, 2047(sp)",
    "beq a0, a1, 12", "bne t0, t1, -4", "blt s0, s1, 4094", "bge a2, a3, -4096",
    "bltu t2, t3, 2048", "bgeu zero, ra, 8",
    "jal ra, 8", "jal zero, -8", "jal t0, 1048574", "jal s0, -1048576",
    "jalr ra, 0(t0)", "jalr zero, 4(ra)", "jalr a0, -2048(a1)",
    "csrrw zero, 0x7C2, t0", "csrrw a0, 0x7C0, a1", "csrrs a0, 0x7E0, zero",
    "csrrs t2, 0xC00, zero", "csrrw x0, 0x7D9, x6", "csrrs ra, 0xC82, zero",
    "ecall", "ebreak",
]


def gen_clang() -> None:
    from oracles import clang_words
    words = clang_words(ORACLE_LINES)
    assert len(words) == len(ORACLE_LINES)
    (DATA / "clang_words.json").write_text(json.dumps(
        {"assembler": "clang --target=riscv32 -march=rv32i -mno-relax",
         "cases": [{"line": l, "word": f"{w:#010x}"} for l, w in zip(ORACLE_LINES, words)]},
        indent=1) + "\n")


def gen_image() -> None:
    assemble_file(CORPUS / "programs" / "exit0.s").save(DATA / "exit0.img")


def _regfile(rng: random.Random) -> PulpRegisterFile:
    groups = []
    for _ in range(8):
        start = rng.randrange(0x8000, 0x8100)
        groups.append(SmarGroup(start, start + rng.randrange(0, 0x40), rng.random() < 0.6,
                                rng.random() < 0.6, rng.random() < 0.7))
    return PulpRegisterFile(0x1000, 0x2000, tuple(groups), rng.randrange(0x1000, 0x2000, 4),
                            rng.random() < 0.5)


def gen_checker() -> None:
    rng = random.Random(20261014)
    data, control = [], []
    for _ in range(200):
        regs = _regfile(rng)
        snap = regs.snapshot()
        region = rng.choice(list(Region))
        addr, size = rng.randrange(0x7FF0, 0x8150), rng.choice([1, 2, 4])
        kind = rng.choice(list(AccessKind))
        v = check_data_access(region, addr, size, kind, regs, pc=0x3000)
        data.append({"regs": snap, "region": region.value, "addr": addr, "size": size,
                     "kind": kind.value, "pass": v.passed})
    for src, dst, transfer in itertools.product(Region, Region, Transfer):
        for _ in range(3):
            regs = _regfile(rng)
            link = rng.randrange(0x1000, 0x2000, 4)
            target = rng.choice([regs.rar_addr, link, rng.randrange(0x1000, 0x4000, 4)])
            e = check_control_transfer(src, transfer, link, target, dst, regs)
            control.append({"regs": regs.snapshot(), "src": src.value, "dst": dst.value,
                            "transfer": transfer.value, "link": link, "target": target,
                            "effect": e.kind.value, "address": e.address,
                            "cause": e.cause.value if e.cause else None})
    (DATA / "checker_golden.json").write_text(json.dumps(
        {"data": data, "control": control}, indent=None, separators=(",", ":")) + "\n")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--skip-clang", action="store_true")
    args = ap.parse_args()
    DATA.mkdir(parents=True, exist_ok=True)
    if not args.skip_clang:
        gen_clang()
    gen_image()
    gen_checker()
    print(f"wrote golden files to {DATA}")


if __name__ == "__main__":
    main()
