import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Collects one PASS/FAIL line per acceptance criterion; printed after the run."""
    def emit(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} acceptance {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_eq41():
    from trustcheck.core_model import ModelParams, StateSpace
    from trustcheck.value_engine import BaselineKernel, solve_equilibrium
    k = BaselineKernel(ModelParams(), StateSpace.grid2d(41))
    return k, solve_equilibrium(k)
