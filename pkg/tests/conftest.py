import numpy as np
import pytest

from thcid import build_grid, random_potential, solve_orbitals
from thcid.coulomb import kernel_multiplier

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_orbitals(dim=1, m=64, N=6, num_modes=16, amplitude=100.0, seed=0):
    grid = build_grid(dim, m)
    return solve_orbitals(grid, random_potential(grid, num_modes, amplitude, seed), N)


@pytest.fixture(scope="session")
def small_orbitals():
    """1D, n = 64, N = 6."""
    return make_orbitals()


@pytest.fixture(scope="session")
def medium_orbitals():
    """1D, n = 256, N = 32."""
    return make_orbitals(m=256, N=32, num_modes=64)


@pytest.fixture(scope="session")
def kernel64(small_orbitals):
    return kernel_multiplier(small_orbitals.grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
