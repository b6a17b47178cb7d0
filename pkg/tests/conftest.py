import numpy as np
import pytest
from hypothesis import settings

from indexone.core import DarbouxDims, HamiltonianSystem

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

# lines printed by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def oscillator(omega=1.0):
    """H = (omega q^2 + p^2) / 2 on one degree of freedom."""
    dims = DarbouxDims(1)
    return HamiltonianSystem(
        dims,
        lambda z: 0.5 * (omega * z[0] ** 2 + z[1] ** 2),
        lambda z: np.array([omega * z[0], z[1]]),
        lambda z: np.diag([omega, 1.0]),
    )


@pytest.fixture
def harmonic():
    return oscillator()
