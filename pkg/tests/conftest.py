import time

import pytest

from pulpsim.corpus import harness


class LineShapes:
    """Collects each distinct trace line, ignoring its step, as the writer flushes."""

    PREFIX = '{"step":'

    def __init__(self):
        self.seconds = 0.0
        self.shapes: dict[str, int] = {}
        self.lines = 0
        self.last_step = -1
        self.bad: list[str] = []

    def __call__(self, chunk: str) -> None:
        shapes, prefix = self.shapes, self.PREFIX
        for line in chunk[:-1].split("\n"):
            self.lines += 1
            if not line.startswith(prefix):
                self.bad.append(line)
                continue
            cut = line.index(",", len(prefix))
            step = int(line[len(prefix):cut])
            if step < self.last_step:
                self.bad.append(line)
            self.last_step = step
            rest = line[cut:]
            if rest not in shapes:
                shapes[rest] = step

    def events(self):
        """One representative line per shape, as full JSON text."""
        return [f"{self.PREFIX}{step}{rest}" for rest, step in self.shapes.items()]


@pytest.fixture(scope="session")
def corpus_specs():
    specs = harness.load_manifest()
    assert all(s.error is None for s in specs), [s.error for s in specs if s.error]
    return specs


@pytest.fixture(scope="session")
def spec_by_name(corpus_specs):
    return {s.name: s for s in corpus_specs}


@pytest.fixture(scope="session")
def traced_runs(corpus_specs):
    """Every corpus case in both modes, traced, hashed and audited, plus the
    distinct trace lines of each run. Shared because it is the slow part."""
    reports, shapes = [], {}
    for spec in corpus_specs:
        for pulp in (True, False):
            collector = LineShapes()
            t0 = time.perf_counter()
            reports.append(harness.run_case(spec, pulp, trace=True, on_chunk=collector))
            collector.seconds = time.perf_counter() - t0
            shapes[(spec.name, pulp)] = collector
    return reports, shapes


@pytest.fixture(scope="session")
def traced_reports(traced_runs):
    return traced_runs[0]


@pytest.fixture(scope="session")
def bench_report():
    results = harness.run_benches(harness.load_bench(), jobs=1)
    return results, harness.overhead_report(results)


CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request, capsys):
    """Record and echo one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(CRITERIA, {})

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        lines[n] = line
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
