import numpy as np
import pytest

from prsmpc.config import build_setup, bundled_config
from prsmpc.optimizer import LinearSystem, MpcProblem
from prsmpc.reachability import Polytope

A = np.array([[1.0, 1.0], [0.0, 1.0]])
B = np.array([[0.5], [1.0]])
W = np.diag([0.01, 1.0])
Q = np.diag([0.1, 1.0])
R = np.array([[0.1]])


def benchmark_problem(state_hw=None, input_hw=None, horizon=30):
    """The double-integrator problem with explicit tightening offsets."""
    state_set = Polytope.box([-np.inf, -(state_hw if state_hw is not None else 1.2)],
                             [np.inf, state_hw if state_hw is not None else 1.2])
    input_set = Polytope.box([-(input_hw if input_hw is not None else 6.0)],
                             [input_hw if input_hw is not None else 6.0])
    return MpcProblem(LinearSystem(A, B), horizon, Q, R, Q, state_set, input_set, Polytope.origin(2))


@pytest.fixture(scope="session")
def benchmark_config():
    return bundled_config("paper-sec5.cfg")


@pytest.fixture(scope="session")
def benchmark_setup(benchmark_config):
    return build_setup(benchmark_config)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(acceptance_log.LINES):
            terminalreporter.write_line(line)
