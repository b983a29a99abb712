import numpy as np
import pytest

from tpa_rte.exceptions import SubcriticalityError
from tpa_rte.fields import CoefficientSet, PhaseField, ScalarField, angular_average, build_kernel
from tpa_rte.geometry import AngularGrid, SpatialGrid, tau_minus
from tpa_rte.transport_linear import (GeneralSource, LinearSolveConfig, ballistic_solution,
                                      check_subcritical, lift_source, solve_linear,
                                      solve_linear_detailed, solve_linear_internal_source)

GRID = SpatialGrid(1.0, 1.0, 12, 12)
ANG = AngularGrid(8)


def _tau():
    X, Y = GRID.centers()
    vx, vy = ANG.directions.T
    return tau_minus(X[..., None], Y[..., None], vx, vy, 1.0, 1.0)


def _medium(sigma_s, sigma_a=1.0, profile="isotropic", g=0.0):
    c = lambda v: ScalarField.constant(GRID, v)
    return CoefficientSet(c(sigma_a), c(0.0), c(sigma_s), build_kernel(ANG, profile, g))


def _bumpy():
    X, Y = GRID.centers()
    return ScalarField(GRID, 1.0 + 0.8 * np.exp(-((X - 0.4) ** 2 + (Y - 0.6) ** 2) / 0.03))


def test_ballistic_without_attenuation():
    u = ballistic_solution(ScalarField.constant(GRID, 0.0), GeneralSource.constant(0.8), ANG,
                           LinearSolveConfig(ray_step=0.05))
    assert np.allclose(u.values, 0.8)


def test_ballistic_constant_extinction():
    u = ballistic_solution(ScalarField.constant(GRID, 1.0), GeneralSource.constant(1.0), ANG,
                           LinearSolveConfig(ray_step=1e-2))
    assert np.max(np.abs(u.values - np.exp(-_tau()))) < 1e-12


def test_ballistic_center_value():
    g = SpatialGrid(1.0, 1.0, 3, 3)
    a = AngularGrid(2)  # ordinates point along +y and -y
    u = ballistic_solution(ScalarField.constant(g, 1.0), GeneralSource.constant(1.0), a,
                           LinearSolveConfig(ray_step=1e-3))
    assert u.values[1, 1, 0] == pytest.approx(np.exp(-0.5), abs=1e-12)


def test_ballistic_refinement_second_order():
    sig = _bumpy()
    src = GeneralSource.constant(1.0)
    ref = ballistic_solution(sig, src, ANG, LinearSolveConfig(ray_step=0.04 / 16)).values
    errs = [np.max(np.abs(ballistic_solution(sig, src, ANG, LinearSolveConfig(ray_step=h)).values - ref))
            for h in (0.04, 0.02)]
    assert errs[1] < errs[0] / 3


def test_lift_zero_and_constant():
    sig = ScalarField.constant(GRID, 2.0)
    cfg = LinearSolveConfig(ray_step=1e-2)
    assert np.all(lift_source(sig, PhaseField.constant(GRID, ANG, 0.0), cfg).values == 0)
    out = lift_source(sig, PhaseField.constant(GRID, ANG, 2.0), cfg).values
    assert np.max(np.abs(out - (1 - np.exp(-2.0 * _tau())))) < 1e-12


def test_lift_refinement_second_order():
    sig = _bumpy()
    X, Y = GRID.centers()
    q = PhaseField(GRID, ANG, np.broadcast_to((np.sin(3 * X) + Y ** 2)[..., None], GRID.shape + (8,)).copy())
    ref = lift_source(sig, q, LinearSolveConfig(ray_step=0.04 / 16)).values
    errs = [np.max(np.abs(lift_source(sig, q, LinearSolveConfig(ray_step=h)).values - ref))
            for h in (0.04, 0.02)]
    assert errs[1] < errs[0] / 3


def test_no_scattering_equals_ballistic():
    cfg = LinearSolveConfig(ray_step=0.02)
    res = solve_linear_detailed(ScalarField.constant(GRID, 1.0), _medium(0.0), GeneralSource.constant(1.0), cfg)
    assert res.iterations == 1
    ref = ballistic_solution(ScalarField.constant(GRID, 1.0), GeneralSource.constant(1.0), ANG, cfg)
    assert np.max(np.abs(res.u.values - ref.values)) < 1e-14


def test_self_refinement_center():
    g = SpatialGrid(1.0, 1.0, 9, 9)
    src = GeneralSource.constant(1.0)

    def center(nv, step):
        a = AngularGrid(nv)
        c = lambda v: ScalarField.constant(g, v)
        m = CoefficientSet(c(1.0), c(0.0), c(0.5), build_kernel(a))
        u = solve_linear(c(1.0), m, src, LinearSolveConfig(ray_step=step, tol_source=1e-12))
        return angular_average(u).values[4, 4]

    coarse, fine = center(16, 0.02), center(32, 0.0025)
    assert abs(coarse - fine) < 2e-2
    assert 0 < fine < 1


@pytest.mark.parametrize("profile, g", [("isotropic", 0.0), ("peaked", 0.5)])
def test_maximum_principle(profile, g):
    u = solve_linear(_bumpy(), _medium(1.5, profile=profile, g=g), GeneralSource.constant(0.9),
                     LinearSolveConfig(ray_step=0.04, tol_source=1e-12))
    assert u.max() <= 0.9 + 1e-12
    assert u.min() > 0


def test_internal_source_zero_matches_plain():
    cfg = LinearSolveConfig(ray_step=0.04, tol_source=1e-12)
    m = _medium(1.0)
    a = solve_linear(_bumpy(), m, GeneralSource.constant(1.0), cfg)
    b = solve_linear_internal_source(_bumpy(), m, GeneralSource.constant(1.0),
                                     PhaseField.constant(GRID, ANG, 0.0), cfg)
    assert np.max(np.abs(a.values - b.values)) < 1e-12


def test_internal_source_positivity_and_superposition(rng):
    cfg = LinearSolveConfig(ray_step=0.04, tol_source=1e-13)
    m = _medium(1.0, profile="peaked", g=0.3)
    f = PhaseField(GRID, ANG, rng.uniform(size=GRID.shape + (8,)))
    zero = GeneralSource.constant(0.0)
    only_f = solve_linear_internal_source(_bumpy(), m, zero, f, cfg)
    assert only_f.min() >= 0
    only_g = solve_linear(_bumpy(), m, GeneralSource.constant(1.0), cfg)
    both = solve_linear_internal_source(_bumpy(), m, GeneralSource.constant(1.0), f, cfg)
    assert np.max(np.abs(both.values - only_f.values - only_g.values)) < 1e-10


def test_subcriticality_enforced():
    with pytest.raises(SubcriticalityError):
        check_subcritical(np.zeros((2, 2)), np.ones((2, 2)))
    assert check_subcritical(np.ones((2, 2)), np.ones((2, 2))) == pytest.approx(0.5)
