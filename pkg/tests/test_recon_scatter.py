import numpy as np
import pytest

from tpa_rte.data_synthesis import synthesize, synthesize_on_refined
from tpa_rte.exceptions import ConvergenceError, DataInconsistencyError
from tpa_rte.fields import ScalarField, build_kernel
from tpa_rte.forward_semilinear import SemilinearConfig, solve_semilinear_detailed
from tpa_rte.geometry import AngularGrid, SpatialGrid
from tpa_rte.phantoms import make_phantom
from tpa_rte.recon_free import relative_errors
from tpa_rte.recon_scatter import (ScatterReconConfig, check_pi_alpha, compute_bracket, compute_eta,
                                   fixed_point_recover_u, recover_pair_scatter, scattering_medium,
                                   solve_scatter_pair, stability_probe)
from tpa_rte.transport_linear import GeneralSource, LinearSolveConfig

N = 12
GRID = SpatialGrid(1.0, 1.0, N, N)
ANG = AngularGrid(8)
INNER = LinearSolveConfig(ray_step=1 / (2 * N), tol_source=1e-12)
FWD = SemilinearConfig(tol_fixed_point=1e-11, inner=INNER)
G1, G2 = GeneralSource.constant(1.0, "g1"), GeneralSource.constant(0.6, "g2")
RC = ScatterReconConfig(1.5, 0.6, 1.0, sigma_a_min=1.0, sigma_b_min=0.3, inner=INNER)


@pytest.fixture(scope="module")
def scatter_data():
    from conftest import smooth_params
    ph = make_phantom("gaussian-inclusions", smooth_params(2.0))
    d = tuple(synthesize_on_refined(ph, g, GRID, ANG, FWD) for g in (G1, G2))
    return ph, ph(GRID, ANG), d


def test_eta_arithmetic():
    H = ScalarField.constant(GRID, 0.22)
    cfg = ScatterReconConfig(2.0, 1.0, 1.0)
    assert np.allclose(compute_eta(H, cfg).values, 0.22 / 3)
    assert np.all(compute_eta(H.with_values(np.zeros(GRID.shape)), cfg).values == 0)
    tight = ScatterReconConfig(1.0, 0.5, 1.0)
    assert np.all(compute_eta(H, tight).values > compute_eta(H, cfg).values)


def test_hand_pair():
    g = SpatialGrid(1.0, 1.0, 2, 2)
    f = lambda v: ScalarField.constant(g, v)
    rec = solve_scatter_pair(f(1.2), f(1.1), f(0.4), f(0.2), 1e-9)
    assert np.allclose(rec.sigma_b_rec.values, 0.5)
    assert np.allclose(rec.sigma_a_rec.values, 1.0)


def test_equal_averages_masked():
    g = SpatialGrid(1.0, 1.0, 2, 2)
    m1 = ScalarField(g, np.array([[0.4, 0.4], [0.4, 0.4]]))
    m2 = ScalarField(g, np.array([[0.4, 0.2], [0.2, 0.2]]))
    rec = solve_scatter_pair(m1, m2, m1, m2, 1e-9)
    assert rec.mask[0, 0] and rec.mask.sum() == 1
    with pytest.raises(DataInconsistencyError):
        solve_scatter_pair(m1, m1, m1, m1, 1e-9)


def test_bracket_degenerate_and_ordered():
    medium = scattering_medium(ScalarField.constant(GRID, 1.0), build_kernel(ANG))
    zero = compute_bracket(ScalarField.constant(GRID, 0.0), G1, medium, RC)
    assert zero.degenerate.all()
    H = ScalarField.constant(GRID, 0.5)
    b = compute_bracket(H, G1, medium, RC)
    assert np.all(b.u_min_avg.values <= b.u_max_avg.values)


def test_bracket_collapses_for_known_absorption():
    c = make_phantom("constant", {"sigma_a": 1.0, "sigma_b": 0.0, "sigma_s": 1.0})(GRID, ANG)
    sol = solve_semilinear_detailed(c, G1, FWD)
    H = synthesize(c, sol.u_avg)
    cfg = ScatterReconConfig(1.0, 0.0, 1.0, sigma_a_min=1.0, inner=INNER)
    b = compute_bracket(H, G1, scattering_medium(c.sigma_s, c.kernel), cfg)
    assert np.max(np.abs(b.u_min_avg.values - sol.u_avg.values)) < 1e-9


def test_linear_absorption_recovered():
    ph = make_phantom("gaussian-inclusions", {"sigma_a": {"background": 1.0, "amplitude": 0.5},
                                              "sigma_b": 0.0, "sigma_s": 1.0})
    errs = []
    for n in (8, 16):
        g = SpatialGrid(1.0, 1.0, n, n)
        inner = LinearSolveConfig(ray_step=1 / (2 * n), tol_source=1e-12)
        d = synthesize_on_refined(ph, G1, g, ANG, SemilinearConfig(tol_fixed_point=1e-11, inner=inner))
        c = ph(g, ANG)
        r = fixed_point_recover_u(d, G1, c.sigma_s, c.kernel, ScatterReconConfig(1.5, 0.0, 1.0, inner=inner))
        errs.append(np.max(np.abs(r.Sigma_a.values - c.sigma_a.values)) / 1.5)
    assert errs[1] < errs[0] / 2.5


def test_monotone_sequences_and_round_trip(scatter_data):
    _, truth, (d1, d2) = scatter_data
    r1 = fixed_point_recover_u(d1, G1, truth.sigma_s, truth.kernel, RC, "max")
    rmin = fixed_point_recover_u(d1, G1, truth.sigma_s, truth.kernel, RC, "min", bracket=r1.bracket)
    assert r1.monotone_violations("down") == 0
    assert rmin.monotone_violations("up") == 0
    assert np.max(np.abs(r1.u_avg.values - rmin.u_avg.values)) <= 2 * RC.tol_fp
    pair, (ra, rb) = recover_pair_scatter(d1, d2, G1, G2, truth.sigma_s, truth.kernel, RC)
    e = relative_errors(pair, truth.sigma_a, truth.sigma_b)
    assert e["sigma_a"]["rel_sup"] < 0.05 and e["sigma_b"]["rel_sup"] < 0.05
    assert np.array_equal(ra.u_avg.values, r1.u_avg.values)


def test_iteration_budget(scatter_data):
    _, truth, (d1, _) = scatter_data
    from dataclasses import replace
    with pytest.raises(ConvergenceError):
        fixed_point_recover_u(d1, G1, truth.sigma_s, truth.kernel, replace(RC, max_iters=2), "max")


def test_pi_alpha_constant_case():
    sa = ScalarField.constant(GRID, 2.0)
    rep = check_pi_alpha(sa, ScalarField.constant(GRID, 0.6), G1, ANG, 2.0)
    assert rep.alpha_estimate == pytest.approx(2.0)
    assert rep.member


def test_pi_alpha_steep_data_gradient():
    X, _ = GRID.centers()
    H = ScalarField(GRID, np.exp(-40 * X))
    rep = check_pi_alpha(ScalarField.constant(GRID, 1.0), H, G1, ANG, 2.0)
    assert rep.alpha_estimate < 0 and not rep.member


def test_pi_alpha_beta_boundary():
    sa = ScalarField.constant(GRID, 2.0)
    rep = check_pi_alpha(sa, sa.with_values(sa.values * 0.3), G1, ANG, 2.0)
    assert rep.beta_estimate <= 0.6 + 1e-12
    assert rep.beta_ok


def test_stability_table_contract(scatter_data):
    ph, _, data = scatter_data
    tab = stability_probe(ph, (G1, G2), GRID, ANG, FWD, RC, data=data)
    assert len(tab.rows) == 1 + 3 * 2
    assert tab.rows[0]["level"] == 0 and tab.rows[0]["above_floor"] == 0
    assert all(r["status"] == "ok" for r in tab.rows)
    ratios = tab.ratios()
    assert len(ratios) == 4
    assert all(0.3 <= r["ratio"] <= 0.8 for r in ratios)
