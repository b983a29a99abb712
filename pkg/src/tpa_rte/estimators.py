"""scikit-learn style front ends for the two reconstruction pipelines.

The functional API does the work; these classes only hold the settings as
constructor parameters (so ``get_params``/``set_params``/``clone`` work) and
store results in trailing-underscore attributes after ``fit``.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import ParameterError
from .forward_semilinear import CollimatedSource, PointSource
from .recon_free import recover_density_collimated, recover_density_point, solve_pointwise_pair
from .recon_scatter import ScatterReconConfig, recover_pair_scatter
from .transport_linear import LinearSolveConfig

__all__ = ["FreeReconstructor", "ScatterReconstructor"]


def _pair(X):
    if len(X) != 2:
        raise ParameterError("X must hold exactly two internal data")
    return X[0], X[1]


class _PairMixin:
    def transform(self, X=None):
        """Stacked ``(sigma_a, sigma_b)`` of shape ``(2, ny, nx)``; masked cells are NaN."""
        if not hasattr(self, "sigma_a_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")
        out = np.stack([self.sigma_a_.values, self.sigma_b_.values])
        out[:, self.mask_] = np.nan
        return out

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).transform()

    def _store(self, rec):
        self.sigma_a_ = rec.sigma_a_rec
        self.sigma_b_ = rec.sigma_b_rec
        self.mask_ = rec.mask
        self.conditioning_ = rec.conditioning
        self.masked_fraction_ = rec.masked_fraction


class FreeReconstructor(_PairMixin, BaseEstimator):
    """Explicit reconstruction without scattering.

    Parameters
    ----------
    epsilon : float, optional
        Exclusion radius around point sources (required for them).
    step : float, optional
        Quadrature spacing along rays; half a cell by default.
    det_floor : float, optional
        Separation below which a cell is masked; ``1e-8`` times the source
        gap by default.
    """

    def __init__(self, epsilon=None, step=None, det_floor=None):
        self.epsilon = epsilon
        self.step = step
        self.det_floor = det_floor

    def fit(self, X, y=None, sources=None):
        """Recover ``(sigma_a, sigma_b)`` from ``X = (H1, H2)`` and two sources."""
        H1, H2 = _pair(X)
        s1, s2 = _pair(sources or ())
        if isinstance(s1, PointSource):
            if self.epsilon is None:
                raise ParameterError("point sources need epsilon")
            d = [recover_density_point(H, s, self.epsilon, self.step) for H, s in ((H1, s1), (H2, s2))]
            gap = abs(float(s1.evaluate(0.0, 1.0)) - float(s2.evaluate(0.0, 1.0)))
        elif isinstance(s1, CollimatedSource):
            d = [recover_density_collimated(H, s, self.step) for H, s in ((H1, s1), (H2, s2))]
            gap = abs(s1.bounds()[1] - s2.bounds()[1])
        else:
            raise ParameterError("sources must be collimated or point sources")
        self.densities_ = tuple(d)
        self._store(solve_pointwise_pair(d[0], d[1], H1, H2, self.det_floor, source_gap=gap))
        return self


class ScatterReconstructor(_PairMixin, BaseEstimator):
    """Fixed-point reconstruction with known scattering.

    Parameters mirror :class:`ScatterReconConfig` plus the inner solver's
    ``ray_step`` and ``tol_source``.
    """

    def __init__(self, sigma_a_max=1.0, sigma_b_max=1.0, g_max=1.0, sigma_a_min=0.0, sigma_b_min=0.0,
                 tol_fp=1e-8, max_iters=200, ray_step=1e-2, tol_source=1e-12, det_floor=None,
                 start="max"):
        self.sigma_a_max = sigma_a_max
        self.sigma_b_max = sigma_b_max
        self.g_max = g_max
        self.sigma_a_min = sigma_a_min
        self.sigma_b_min = sigma_b_min
        self.tol_fp = tol_fp
        self.max_iters = max_iters
        self.ray_step = ray_step
        self.tol_source = tol_source
        self.det_floor = det_floor
        self.start = start

    def config(self):
        return ScatterReconConfig(
            sigma_a_max=self.sigma_a_max, sigma_b_max=self.sigma_b_max, g_max=self.g_max,
            sigma_a_min=self.sigma_a_min, sigma_b_min=self.sigma_b_min, tol_fp=self.tol_fp,
            max_iters=self.max_iters,
            inner=LinearSolveConfig(ray_step=self.ray_step, tol_source=self.tol_source))

    def fit(self, X, y=None, sources=None, sigma_s=None, kernel=None):
        """Recover ``(sigma_a, sigma_b)`` from ``X = (H1, H2)``, two general sources and the scattering."""
        H1, H2 = _pair(X)
        g1, g2 = _pair(sources or ())
        if sigma_s is None or kernel is None:
            raise ParameterError("sigma_s and kernel are required")
        rec, results = recover_pair_scatter(H1, H2, g1, g2, sigma_s, kernel, self.config(),
                                            det_floor=self.det_floor, start=self.start)
        self.fixed_points_ = results
        self.n_iter_ = tuple(r.iterations for r in results)
        self._store(rec)
        return self
