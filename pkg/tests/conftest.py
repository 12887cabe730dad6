import numpy as np
import pytest

from fdi_alloc.algorithms import AgentState
from fdi_alloc.graph import line_graph
from fdi_alloc.problem import quadratic_problem

# Four generators on a line: costs a + b x + c x^2, fixed demands.
A = [0.5, 1.5, 3.0, 1.0]
B = [3.0, 4.0, 5.0, 2.0]
C = [2.0, 1.0, 0.5, 1.5]
D = [30.0, 40.0, 40.0, 35.0]
X0 = [40.0, 35.0, 45.0, 40.0]


@pytest.fixture
def problem():
    return quadratic_problem(A, B, C, D)


@pytest.fixture
def line4():
    return line_graph(4)


@pytest.fixture
def x0_state():
    return AgentState.from_arrays(X0)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for the acceptance summary and echo it."""
    lines = request.config._acceptance_lines

    def _report(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return _report


def rng(seed=0):
    return np.random.default_rng(seed)
