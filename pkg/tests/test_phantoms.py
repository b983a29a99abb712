import numpy as np
import pytest

from tpa_rte.exceptions import ParameterError
from tpa_rte.geometry import AngularGrid, SpatialGrid
from tpa_rte.phantoms import make_phantom

GRID = SpatialGrid(1.0, 1.0, 24, 24)
ANG = AngularGrid(4)


def test_constant_fields():
    c = make_phantom("constant", {"sigma_a": 1.0, "sigma_b": 0.5, "sigma_s": 2.0})(GRID, ANG)
    assert np.all(c.sigma_a.values == 1.0)
    assert np.all(c.sigma_b.values == 0.5)
    assert np.all(c.sigma_s.values == 2.0)


def test_inclusions_range(smooth_phantom):
    c = smooth_phantom(0.0)(GRID, ANG)
    assert 1.0 <= c.sigma_a.min() and c.sigma_a.max() <= 1.5
    assert c.sigma_a.max() > 1.3
    assert c.bounds["a"] == (1.0, 1.5)


def test_checkerboard_hits_bounds():
    c = make_phantom("checkerboard", {"sigma_a": {"low": 0.5, "high": 2.0}, "sigma_b": 0.1,
                                      "sigma_s": {"low": 0.0, "high": 1.0}})(GRID, ANG)
    assert c.sigma_a.min() == 0.5 and c.sigma_a.max() == 2.0
    assert c.bounds["a"] == (0.5, 2.0)


def test_cutoff_vanishes_near_point():
    ph = make_phantom("gaussian-inclusions", {
        "sigma_a": 1.0, "sigma_s": 0.0,
        "sigma_b": {"background": 0.2, "amplitude": 0.3,
                    "cutoff": {"point": [0.5, 0.0], "radius": 0.1, "width": 0.1}}})
    c = ph(GRID, ANG)
    X, Y = GRID.centers()
    assert np.all(c.sigma_b.values[np.hypot(X - 0.5, Y) < 0.1] == 0)


def test_jitter_is_seeded():
    p = {"sigma_a": {"background": 1.0, "amplitude": 0.5}, "sigma_b": 0.1, "sigma_s": 0.0, "jitter": 0.05}
    a = make_phantom("gaussian-inclusions", p, rng=np.random.default_rng(3))(GRID, ANG)
    b = make_phantom("gaussian-inclusions", p, rng=np.random.default_rng(3))(GRID, ANG)
    c = make_phantom("gaussian-inclusions", p, rng=np.random.default_rng(4))(GRID, ANG)
    assert np.array_equal(a.sigma_a.values, b.sigma_a.values)
    assert not np.array_equal(a.sigma_a.values, c.sigma_a.values)
    with pytest.raises(ParameterError):
        make_phantom("gaussian-inclusions", p)


@pytest.mark.parametrize("params", [
    {"sigma_a": -1.0, "sigma_b": 0.0, "sigma_s": 0.0},
    {"sigma_a": 1.0, "sigma_b": 0.0},
    {"sigma_a": 1.0, "sigma_b": 0.0, "sigma_s": 0.0, "extra": 1},
])
def test_invalid_params(params):
    with pytest.raises(ParameterError):
        make_phantom("constant", params)


def test_unknown_name():
    with pytest.raises(ParameterError):
        make_phantom("shepp-logan", {})
