import numpy as np
import pytest

from tpa_rte.geometry import AngularGrid, SpatialGrid
from tpa_rte.phantoms import make_phantom


def smooth_params(sigma_s=0.0):
    return {
        "sigma_a": {"background": 1.0, "amplitude": 0.5},
        "sigma_b": {"background": 0.3, "amplitude": 0.3,
                    "inclusions": [{"center": [0.6, 0.35], "width": 0.15}]},
        "sigma_s": sigma_s,
    }


@pytest.fixture
def unit16():
    return SpatialGrid(1.0, 1.0, 16, 16), AngularGrid(8)


@pytest.fixture
def smooth_phantom():
    return lambda sigma_s=0.0: make_phantom("gaussian-inclusions", smooth_params(sigma_s))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def record(criterion, passed, detail):
    """Store one acceptance outcome for the end-of-run summary."""
    ACCEPTANCE[criterion] = (bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if passed else 'FAIL'} {detail}")
