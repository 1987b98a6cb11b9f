import numpy as np
import pytest

from delaystab.model import validate_system

# (h, p) -> (r_hat, r_star, stable) reference values for the two-state system
REFERENCE_ROWS = {
    (0.1, -0.1): (26, 12, True),
    (0.25, -0.8): (79, 22, True),
    (0.3, 0.1): (2020, 463, True),
    (0.2, 2.0): (507, 111, False),
    (0.5, 0.5): (9742, 795, False),
}


def two_state(h, p, **kw):
    raw = {"A": [np.zeros((2, 2)), [[-1.0, 0.5], [0.0, p]]], "G": [[[0.0, 0.0], [-1.0, 0.0]]], "h": h}
    raw.update(kw)
    return validate_system(raw)


def vehicle_chain(k1, k2, h=0.05):
    Z = np.zeros((2, 2))
    Gs = -np.diag([k1, k2]) / (2 * h)
    return validate_system({"A": [Z, [[0.0, -2.5], [-2.5, 0.0]], Z, Z], "G": [Z, Gs, Gs], "h": h})


def scalar(a0=-1.0, a1=0.0, g=0.0, h=1.0):
    return validate_system({"A": [a0, a1], "G": [g], "h": h})


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference_systems():
    return {hp: two_state(*hp) for hp in REFERENCE_ROWS}
