import numpy as np
import pytest

from tdrope.mdp import ChainMdp, PolicyTable, QueueMdp


@pytest.fixture
def chain():
    return ChainMdp(20, 0.5)


@pytest.fixture
def queue():
    return QueueMdp(0.1, 0.9)


@pytest.fixture
def pi_b():
    return PolicyTable.constant(0.2)


@pytest.fixture
def pi_e():
    return PolicyTable.constant(1.0)


def linear_stationary(P):
    """Stationary law from the linear system ``p (P - I) = 0, sum p = 1``."""
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    return np.linalg.lstsq(A, b, rcond=None)[0]


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def report(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
