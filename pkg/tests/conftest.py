import numpy as np
import pytest

from psq.fock import make_number_state, make_thermal
from psq.grid import cartesian_grid
from psq.povm import build_povm

# acceptance outcomes, one line per criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ok, msgs = ACCEPTANCE.get(criterion, (True, ""))
    ACCEPTANCE[criterion] = (ok and passed, (msgs + "; " if msgs else "") + detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {msg}")


DEFAULT_DIM = 60


@pytest.fixture(scope="session")
def default_grid():
    return cartesian_grid(-8, 8, -8, 8, 32, 32)


@pytest.fixture(scope="session")
def vacuum_povm(default_grid):
    return build_povm(default_grid, make_number_state(0, DEFAULT_DIM))


@pytest.fixture(scope="session")
def number1_povm(default_grid):
    return build_povm(default_grid, make_number_state(1, DEFAULT_DIM))


@pytest.fixture(scope="session")
def thermal_povm(default_grid):
    return build_povm(default_grid, make_thermal(0.5, DEFAULT_DIM))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def vacuum_margin(vacuum_povm):
    from psq.povm import cartesian_margin

    return cartesian_margin(vacuum_povm, "x")


@pytest.fixture(scope="session")
def vacuum_margin_moments(vacuum_margin):
    # node-rule (L(x), L(x^2)) of the x-margin, shared by several suites
    from psq.spectrality import first_two_moments

    return first_two_moments(vacuum_margin, "nodes")
