import random

import pytest

from pulpsim.assembler import assemble
from pulpsim.image import ImageTooLarge, OverlappingSegments, ProgramImage
from pulpsim.isa import Instruction, encode
from pulpsim.machine import (MachineHalted, Status, load_image, run, state_hash, step, syscall)
from pulpsim.pulpregs import AccessKind, Privilege, Region
from pulpsim.trace import trace_hash
from pulpsim.traps import Trap, TrapKind

EXIT = "li a7, 93\necall\n"


def prog(primary: str, secondary: str = "", data: str = "") -> ProgramImage:
    src = f".org 0x1000\n.primary_start\n_start:\n{primary}\n.primary_end\n"
    if secondary:
        src += f".org 0x3000\n{secondary}\n"
    src += f".org 0x8000\n{data or 'buf: .space 64'}\n"
    return assemble(src)


def go(img, steps=10_000, **kw):
    st = load_image(img, **kw)
    return st, run(st, steps).outcome


def test_loader():
    img = prog("nop\nnop\n" + EXIT)
    img = ProgramImage(0x1000, 0x1000, 0x1040, img.segments, img.symbols)
    st = load_image(img)
    assert (st.pulp.ppcr_start, st.pulp.ppcr_end) == (0x1000, 0x1040)
    assert st.pc == 0x1000 and st.privilege is Privilege.USER
    assert st.regs[2] == (1 << 20) - 16
    assert not any(g.valid for g in st.pulp.smar) and not st.pulp.rar_valid
    assert st.mem[0x8000:0x8040] == bytes(64) and st.mem_size == 1 << 20
    assert st.status is Status.RUNNING


def test_empty_image_traps_on_zero_word():
    st = load_image(ProgramImage(0x1000, 0x1000, 0x1040, []))
    assert not any(st.mem)
    step(st)
    assert st.status is Status.TRAPPED
    assert st.trap.kind is TrapKind.ILLEGAL_INSTRUCTION
    assert (st.trap.pc, st.trap.word) == (0x1000, 0)


def test_segment_at_top_of_memory():
    nop = encode(Instruction("addi")).to_bytes(4, "little")
    fits = ProgramImage(0xFFFF0, 0xFFFF0, 0x100000, [(0xFFFF0, nop * 4)])
    st = load_image(fits, 1 << 20)
    assert st.mem[-16:] == nop * 4
    with pytest.raises(ImageTooLarge):
        load_image(ProgramImage(0xFFFF0, 0xFFFF0, 0x100000, [(0xFFFF0, nop * 16)]), 1 << 20)
    with pytest.raises(OverlappingSegments):
        load_image(ProgramImage(0x1000, 0x1000, 0x1010, [(0x1000, nop * 4), (0x1008, nop)]))


def test_exit0():
    st, out = go(prog("li a0, 0\n" + EXIT))
    assert out.kind == "exited" and out.code == 0
    assert st.counters.instructions_retired == 3


def test_nop_step():
    st = load_image(prog("nop\n" + EXIT))
    regs, mem, pulp = list(st.regs), bytes(st.mem), st.pulp
    step(st)
    assert st.pc == 0x1004
    assert st.counters.to_dict() == {"instructions_retired": 1, "loads": 0, "stores": 0,
                                     "checks_performed": 0, "config_instructions": 0, "traps": 0}
    assert st.regs == regs and bytes(st.mem) == mem and st.pulp == pulp


def test_step_limit_exact():
    st, out = go(prog("loop: j loop"), 1000)
    assert out.kind == "step_limit"
    assert st.counters.instructions_retired == 1000
    assert st.status is Status.RUNNING
    with pytest.raises(ValueError):
        run(st, 0)


def test_halted_machine_stays_halted():
    st, _ = go(prog("li a0, 3\n" + EXIT))
    assert st.status is Status.EXITED and st.exit_code == 3
    with pytest.raises(MachineHalted):
        step(st)
    with pytest.raises(MachineHalted):
        run(st, 10)


UNGRANTED = "li t2, 0x8000\njal ra, helper\n" + "li a0, 0\n" + EXIT


@pytest.mark.parametrize("op", ["sw", "sh", "sb"])
def test_trapped_store_has_no_side_effects(op):
    img = prog("li s1, 0x11223344\n" + UNGRANTED, f"helper:\n{op} s1, 4(t2)\nret")
    st, out = go(img)
    assert out.kind == "trapped"
    c = out.cause
    assert c.kind is TrapKind.OUT_OF_BOUND_ACCESS and c.addr == 0x8004 and c.access is AccessKind.WRITE
    assert c.pc == img.symbols["helper"]
    assert st.mem[0x8000:0x8040] == bytes(64)
    assert st.counters.stores == 0 and st.counters.traps == 1
    assert st.pc == c.pc

    st, out = go(img, pulp_enabled=False)
    assert out.kind == "exited"
    assert st.mem[0x8004:0x8008] != bytes(4)


def test_trapped_load_leaves_registers():
    img = prog("li a3, 77\n" + UNGRANTED, "helper:\nlw a3, 0(t2)\nret")
    st = load_image(img)
    run(st, 1000)
    assert st.trap.kind is TrapKind.OUT_OF_BOUND_ACCESS and st.trap.access is AccessKind.READ
    assert st.regs[13] == 77 and st.counters.loads == 0


def test_permitted_secondary_access():
    body = ("li t2, 0x8000\n%start_protect(buf, 64, RW, 0)\njal ra, helper\n"
            "%end_protect(0)\nlw a0, 0(t2)\n" + EXIT)
    st, out = go(prog(body, "helper:\nli t3, 9\nsw t3, 0(t2)\nret"))
    assert out.code == 9
    assert st.counters.checks_performed >= 3   # call, store, return


def test_grant_revoked_after_end_protect():
    body = ("li t2, 0x8000\n%start_protect(buf, 64, RW, 0)\njal ra, helper\n"
            "%end_protect(0)\njal ra, helper\n" + EXIT)
    st, out = go(prog(body, "helper:\nsw t2, 0(t2)\nret"))
    assert out.cause.kind is TrapKind.OUT_OF_BOUND_ACCESS
    assert st.counters.stores == 1


def test_boundary_fall_through_traps():
    img = assemble(".org 0x1000\n.primary_start\n_start: nop\n.primary_end\nnop\n")
    st, out = go(img)
    assert out.cause.kind is TrapKind.BOUNDARY_VIOLATION
    assert (out.cause.pc, out.cause.target) == (0x1000, 0x1004)


def test_branch_into_secondary_traps():
    img = assemble(".org 0x1000\n.primary_start\n_start: beq zero, zero, helper\nnop\n"
                   ".primary_end\nhelper: nop\n")
    _, out = go(img)
    assert out.cause.kind is TrapKind.BOUNDARY_VIOLATION and out.cause.target == 0x1008


def test_return_address_error():
    img = prog("jal ra, helper\nli a0, 0\n" + EXIT, "helper:\naddi ra, ra, 4\nret")
    st, out = go(img)
    c = out.cause
    assert c.kind is TrapKind.RETURN_ADDRESS_ERROR
    assert c.expected == 0x1004 and c.target == 0x1008 and c.pc == 0x3004
    _, out = go(img, pulp_enabled=False)
    assert out.kind == "exited"


def test_secondary_csr_write_is_config_violation():
    img = prog("jal ra, helper\n" + EXIT, "helper:\ncsrw smar0_lo, zero\nret")
    st, out = go(img)
    assert out.cause.kind is TrapKind.PULP_CONFIG_VIOLATION and out.cause.csr_id == 0x7C2
    assert st.counters.config_instructions == 0


def test_primary_ppcr_write_is_config_violation():
    _, out = go(prog("csrw ppcr_lo, zero\n" + EXIT))
    assert out.cause.kind is TrapKind.PULP_CONFIG_VIOLATION and out.cause.csr_id == 0x7C0


def test_csr_reads():
    st, out = go(prog("nop\nnop\ncsrr a0, instret\ncsrr a1, ppcr_hi\ncsrr a2, rar\n" + EXIT))
    assert out.code == 2
    assert st.regs[11] == st.pulp.ppcr_end and st.regs[12] == 0
    _, out = go(prog("csrr a0, 0x300\n" + EXIT))
    assert out.cause.kind is TrapKind.ILLEGAL_INSTRUCTION


def test_config_instructions_counter():
    body = "%start_protect(buf, 8, R, 0)\n%end_protect(0)\nli a0, 0\n" + EXIT
    st, _ = go(prog(body))
    assert st.counters.config_instructions == 6


def test_misaligned_and_mem_fault():
    _, out = go(prog("li t0, 0x8001\nlw a0, 0(t0)\n" + EXIT))
    assert out.cause.kind is TrapKind.MISALIGNED_ACCESS and out.cause.addr == 0x8001
    _, out = go(prog("li t0, 0x200000\nsw a0, 0(t0)\n" + EXIT))
    assert out.cause.kind is TrapKind.MEM_FAULT and out.cause.addr == 0x200000
    _, out = go(prog("li t0, 0x1002\njr t0\n"))
    assert out.cause.kind is TrapKind.MISALIGNED_ACCESS


def test_ebreak():
    _, out = go(prog("ebreak"))
    assert out.cause.kind is TrapKind.BREAKPOINT


def test_syscall_write_read_exit():
    body = ("li a0, 0\nla a1, buf\nli a2, 5\nli a7, 63\necall\nmv s0, a0\n"
            "li a0, 1\nla a1, buf\nmv a2, s0\nli a7, 64\necall\nli a0, 7\n" + EXIT)
    st, out = go(prog(body), input=b"hey")
    assert out.code == 7 and bytes(st.output) == b"hey"
    assert st.input_pos == 3
    assert st.privilege is Privilege.USER


def test_unknown_syscall():
    _, out = go(prog("li a7, 999\necall"))
    assert out.cause.kind is TrapKind.UNKNOWN_SYSCALL and out.cause.number == 999


def test_syscall_direct():
    st = load_image(prog("nop"))
    st.mem[0x8000:0x8003] = b"abc"
    pulp = st.pulp
    syscall(st, 64, (1, 0x8000, 3))
    assert bytes(st.output) == b"abc" and st.regs[10] == 3
    assert st.privilege is Privilege.USER and st.pulp == pulp
    with pytest.raises(Trap) as e:
        syscall(st, 7, ())
    assert e.value.cause.kind is TrapKind.UNKNOWN_SYSCALL
    with pytest.raises(Trap):
        syscall(st, 64, (1, (1 << 20) - 2, 8))


def test_kernel_write_of_ungranted_buffer_from_secondary():
    # The handler runs in kernel mode, so its access is not checked.
    img = prog("jal ra, helper\nli a0, 0\n" + EXIT,
               "helper:\nli a0, 1\nli a1, 0x8000\nli a2, 4\nli a7, 64\necall\nret",
               "buf: .ascii \"priv\"")
    st, out = go(img)
    assert out.code == 0 and bytes(st.output) == b"priv"


ALU = ["add", "sub", "xor", "or", "and", "sll", "srl", "sra", "slt", "sltu"]
IMM = ["addi", "xori", "ori", "andi", "slti", "sltiu"]


def test_x0_stays_zero():
    rng = random.Random(4)
    for _ in range(30):
        lines = [f"li x{r}, {rng.randint(-2**31, 2**31 - 1)}" for r in range(5, 10)]
        for _ in range(100):
            rd = rng.choice([0, 0, 5, 6, 7, 8, 9])
            a, b = rng.randrange(32), rng.randrange(32)
            x = rng.random()
            if x < 0.4:
                lines.append(f"{rng.choice(ALU)} x{rd}, x{a}, x{b}")
            elif x < 0.7:
                lines.append(f"{rng.choice(IMM)} x{rd}, x{a}, {rng.randint(-2048, 2047)}")
            elif x < 0.8:
                lines.append(f"lui x{rd}, {rng.randrange(1 << 20)}")
            elif x < 0.9:
                lines.append(f"auipc x{rd}, {rng.randrange(1 << 20)}")
            else:
                lines.append(f"csrrs x{rd}, cycle, x0")
        st = load_image(prog("\n".join(lines) + "\nli a0, 0\n" + EXIT))
        while st.status is Status.RUNNING:
            step(st)
            assert st.regs[0] == 0
        assert st.exit_code == 0


def test_alu_semantics_spot_checks():
    body = """li t0, -8
li t1, 3
sra a0, t0, t1
srl a1, t0, t1
slt a2, t0, t1
sltu a3, t0, t1
sub a4, t1, t0
lui a5, 0xFFFFF
auipc a6, 0
sltiu s2, t1, -1
li t2, 0x8000
li s3, -2
sh s3, 0(t2)
lh s4, 0(t2)
lhu s5, 0(t2)
lb s6, 1(t2)
lbu s7, 1(t2)
li a7, 93
li a0, 0
ecall"""
    st, _ = go(prog(body))
    r = st.regs
    m = 0xFFFFFFFF
    assert r[11] == (-8 & m) >> 3
    assert r[12] == 1 and r[13] == 0 and r[14] == 11
    assert r[15] == 0xFFFFF000
    assert r[16] == st.symbols["_start"] + 4 * 8
    assert r[18] == 1
    assert r[20] == (-2 & m) and r[21] == 0xFFFE
    assert r[22] == m and r[23] == 0xFF


def test_determinism_and_hashes():
    img = prog("li t2, 0x8000\n%start_protect(buf, 64, RW, 0)\njal ra, helper\n%end_protect(0)\n"
               "li a0, 0\n" + EXIT, "helper:\nsw t2, 0(t2)\nret")
    results = []
    for _ in range(3):
        st = load_image(img)
        res = run(st, 1000, trace=True)
        results.append((state_hash(st), trace_hash(res.trace)))
    assert len(set(results)) == 1
    st = load_image(img, pulp_enabled=False)
    assert state_hash(st) != state_hash(load_image(img))


def test_region_tracking():
    st = load_image(prog("nop"))
    assert st.region() is Region.PRIMARY
    assert st.region(0x3000) is Region.SECONDARY
