import numpy as np
import pytest

from isac_v2i.config import SimConfig


@pytest.fixture
def cfg():
    return SimConfig()


@pytest.fixture
def short_cfg():
    """A 0.5 s pass: enough epochs for the filters to settle, cheap to run."""
    return SimConfig(T=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(capsys):
    """Record and print one pass/fail line per acceptance criterion."""

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
