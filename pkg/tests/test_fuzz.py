from hypothesis import given, settings, strategies as st

from pulpsim.audit import TraceAuditor
from pulpsim.fuzz import FuzzConfig, audit_program, generate
from pulpsim.machine import load_image, run
from pulpsim.traps import TrapKind


def test_generate_is_deterministic():
    for seed in (0, 1, 12345):
        a, b = generate(seed), generate(seed)
        assert a.source == b.source
        assert a.image.to_bytes() == b.image.to_bytes()
    assert generate(1).source != generate(2).source


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_size_bound(seed):
    prog = generate(seed)
    assert 1 <= prog.instructions <= 200
    assert prog.image.primary_start == 0x1000


def test_tighter_bound_respected():
    cfg = FuzzConfig(max_instructions=60)
    for seed in range(30):
        assert generate(seed, cfg).instructions <= 60


def test_programs_make_protected_calls():
    calls = sum("%protect_call" in generate(s).source for s in range(50))
    assert calls > 25


def test_sample_is_sound_and_varied():
    kinds = set()
    for seed in range(200):
        result, rep = audit_program(generate(seed))
        assert rep.sound, (seed, rep.summary())
        assert result.outcome.kind in ("exited", "trapped")
        kinds.add(result.outcome.cause.kind if result.outcome.kind == "trapped" else "exited")
    # The generator must exercise every way a callee can misbehave.
    assert {"exited", TrapKind.OUT_OF_BOUND_ACCESS, TrapKind.RETURN_ADDRESS_ERROR,
            TrapKind.PULP_CONFIG_VIOLATION} <= kinds


def test_auditor_catches_what_the_checker_trapped():
    """With checks off the same program runs past the bad access; an enforcing
    auditor replaying that trace must flag it at the step the checker trapped."""
    seen = 0
    for seed in range(200):
        prog = generate(seed)
        on, _ = audit_program(prog)
        if on.outcome.kind != "trapped" or on.outcome.cause.kind is not TrapKind.OUT_OF_BOUND_ACCESS:
            continue
        step = on.state.counters.instructions_retired + 1  # the trapped one never retired
        st_off = load_image(prog.image, pulp_enabled=False)
        auditor = TraceAuditor(enforce=True)
        run(st_off, 100_000, trace=auditor)
        rep = auditor.finish()
        assert rep.illegal_accesses, seed
        first = rep.illegal_accesses[0]
        assert first.step == step and first.pc == on.outcome.cause.pc, seed
        seen += 1
    assert seen > 50


def test_checks_off_disables_only_access_and_transfer_checks():
    for seed in range(100):
        result, _ = audit_program(generate(seed), pulp_enabled=False)
        if result.outcome.kind == "trapped":
            # Rule 2 lives in the register file and stays on.
            assert result.outcome.cause.kind not in (TrapKind.OUT_OF_BOUND_ACCESS,
                                                     TrapKind.RETURN_ADDRESS_ERROR,
                                                     TrapKind.BOUNDARY_VIOLATION)
