import numpy as np
import pytest

from dehom_evo.homog import default_surrogate
from dehom_evo.lowfid import double_clamped_beam, generate_initial_population

ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def surrogate():
    return default_surrogate()


@pytest.fixture(scope="session")
def small_population(surrogate):
    """Ten low-fidelity beam designs on a 12x6 grid (volume 0.25..0.5)."""
    problem = double_clamped_beam(12, 6)
    schedule = [(v, (0.1, 0.15, 0.2)[k % 3]) for k, v in enumerate(np.linspace(0.25, 0.5, 10))]
    return problem, generate_initial_population(problem, surrogate, schedule, iters=30)
