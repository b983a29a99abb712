import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tpa_rte.data_synthesis import synthesize_on_refined
from tpa_rte.estimators import FreeReconstructor, ScatterReconstructor
from tpa_rte.exceptions import ParameterError
from tpa_rte.forward_semilinear import CollimatedSource, PointSource, SemilinearConfig
from tpa_rte.geometry import AngularGrid, SpatialGrid
from tpa_rte.recon_free import recover_density_collimated, solve_pointwise_pair
from tpa_rte.transport_linear import GeneralSource, LinearSolveConfig

GRID = SpatialGrid(1.0, 1.0, 10, 10)
ANG = AngularGrid(8)
CFG = SemilinearConfig(tol_fixed_point=1e-11, inner=LinearSolveConfig(ray_step=0.05, tol_source=1e-12))


def test_params_and_clone():
    est = ScatterReconstructor(sigma_a_max=2.0, tol_fp=1e-7)
    p = est.get_params()
    assert p["sigma_a_max"] == 2.0 and p["tol_fp"] == 1e-7
    c = clone(est.set_params(g_max=3.0))
    assert c.get_params()["g_max"] == 3.0
    assert not hasattr(c, "sigma_a_")
    assert FreeReconstructor(epsilon=0.1).get_params() == {"epsilon": 0.1, "step": None, "det_floor": None}


def test_transform_requires_fit():
    with pytest.raises(NotFittedError):
        FreeReconstructor().transform()


def test_free_matches_functional(smooth_phantom):
    ph = smooth_phantom(0.0)
    s = (CollimatedSource(1.0, 0.0), CollimatedSource(0.6, 0.0))
    X = tuple(synthesize_on_refined(ph, src, GRID, ANG, CFG) for src in s)
    est = FreeReconstructor().fit(X, sources=s)
    p = [recover_density_collimated(d, src) for d, src in zip(X, s)]
    ref = solve_pointwise_pair(p[0], p[1], X[0], X[1], source_gap=0.4)
    assert np.array_equal(est.sigma_a_.values, ref.sigma_a_rec.values)
    out = est.transform()
    assert out.shape == (2, 10, 10)
    assert np.array_equal(np.isnan(out[0]), est.mask_)


def test_free_input_checks():
    with pytest.raises(ParameterError):
        FreeReconstructor().fit((1,), sources=())
    pts = (PointSource((0.5, 0.0), (0.0, -1.0), 1.0), PointSource((0.5, 0.0), (0.0, -1.0), 0.6))
    with pytest.raises(ParameterError):
        FreeReconstructor().fit((None, None), sources=pts)


def test_scatter_fit_transform(smooth_phantom):
    ph = smooth_phantom(2.0)
    g = (GeneralSource.constant(1.0), GeneralSource.constant(0.6))
    X = tuple(synthesize_on_refined(ph, src, GRID, ANG, CFG) for src in g)
    truth = ph(GRID, ANG)
    est = ScatterReconstructor(sigma_a_max=1.5, sigma_b_max=0.6, g_max=1.0, sigma_a_min=1.0,
                               sigma_b_min=0.3, ray_step=0.05)
    out = est.fit_transform(X, sources=g, sigma_s=truth.sigma_s, kernel=truth.kernel)
    assert len(est.n_iter_) == 2
    assert np.nanmax(np.abs(out[0] - truth.sigma_a.values)) / 1.5 < 0.05
    with pytest.raises(ParameterError):
        est.fit(X, sources=g)
