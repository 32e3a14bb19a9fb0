import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rmhedge import preset_model

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

REGIME_PARAMS = {
    "K": 2, "sigma": [0.15, 0.35], "rates": [0.02, 0.02],
    "rho": [[0.0, -0.05], [0.05, 0.0]], "intensity": [[0.0, 1.0], [1.0, 0.0]],
    "levy": {"kind": "atoms", "points": [[0.1], [-0.2]], "weights": [0.2, 0.1]},
}


@pytest.fixture
def bs():
    return preset_model("black_scholes", {"sigma": 0.2, "r": 0.0}, "call", {"strike": 100.0, "maturity": 1.0})


@pytest.fixture
def regime():
    return preset_model("exp_levy_regime", REGIME_PARAMS, "call",
                        {"strike": 100.0, "maturity": 1.0, "transition": [[0.0, 1.0], [0.0, 0.0]]})


def states(*rows):
    return np.array(rows, dtype=float)


# acceptance lines collected by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
