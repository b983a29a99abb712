"""Semilinear transport with two-photon absorption.

The nonlinearity ``sigma_b <u> u`` enters only through the angular average,
so the solvers freeze ``m = <u>``, solve a linear problem with absorption
``sigma_a + sigma_b m`` and update ``m`` until successive averages agree.
Three illuminations are supported: a general bounded boundary source, a
collimated beam (delta in angle, kept as a separate ballistic field) and,
for non-scattering media, a point source on the boundary.
"""
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConvergenceError, ParameterError, ValidationError
from .fields import PhaseField, ScalarField, angular_average
from .geometry import RaySet, tau_minus
from .transport_linear import (GeneralSource, LinearSolveConfig, RayOperator,
                               solve_linear_detailed)

__all__ = [
    "SemilinearConfig",
    "CollimatedSource",
    "PointSource",
    "CollimatedSolution",
    "SemilinearResult",
    "AdmissibilityReport",
    "AdmissibilityWarning",
    "check_source_smallness",
    "solve_semilinear",
    "solve_semilinear_detailed",
    "solve_semilinear_collimated",
    "solve_semilinear_point",
    "bernoulli_profile",
    "beam_rays",
    "point_rays",
]

log = logging.getLogger(__name__)


class AdmissibilityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SemilinearConfig:
    """Outer fixed-point controls.

    ``warn_only`` switches the admissibility precondition from an error to
    a warning so experiments can probe beyond the sufficient conditions.
    ``inexact_inner`` loosens the inner tolerance to this multiple of the
    previous outer gap (never below ``inner.tol_source``); 0 disables it.
    """

    tol_fixed_point: float = 1e-8
    max_outer_iters: int = 200
    inner: LinearSolveConfig = field(default_factory=LinearSolveConfig)
    warn_only: bool = False
    inexact_inner: float = 1e-2

    def __post_init__(self):
        if not self.tol_fixed_point > 0:
            raise ParameterError("tol_fixed_point must be positive")
        if int(self.max_outer_iters) < 1:
            raise ParameterError("max_outer_iters must be at least 1")
        if not 0 <= self.inexact_inner < 1:
            raise ParameterError("inexact_inner must lie in [0, 1)")

    def inner_for(self, gap):
        """Inner settings for the next outer step given the last gap."""
        tol = max(self.inner.tol_source, self.inexact_inner * gap)
        return replace(self.inner, tol_source=tol)


@dataclass(frozen=True, eq=False)
class CollimatedSource:
    """Beam ``g(x) delta(v - v')`` entering through the boundary.

    Parameters
    ----------
    profile : float or callable
        ``profile(px, py)`` on the boundary, or a constant.
    theta : float
        Beam angle, ``v' = (cos theta, sin theta)``.
    g_max : float, optional
        Bound on the profile; required for callables used in admissibility
        checks, measured on the grid otherwise.
    """

    profile: object
    theta: float
    g_max: float = None
    name: str = "collimated"

    def __post_init__(self):
        if not callable(self.profile):
            val = float(self.profile)
            if val < 0:
                raise ParameterError("beam profile must be non-negative")
            object.__setattr__(self, "g_max", val if self.g_max is None else self.g_max)

    @property
    def direction(self):
        return np.array([np.cos(self.theta), np.sin(self.theta)])

    def evaluate(self, px, py):
        if callable(self.profile):
            return np.asarray(self.profile(px, py), dtype=float) * np.ones(np.shape(px))
        return np.full(np.shape(px), float(self.profile))

    def bounds(self, grid=None, angles=None, step=None):
        if self.g_max is not None:
            lo = self.g_max if not callable(self.profile) else 0.0
            return lo, float(self.g_max)
        rays = beam_rays(grid, self, step or grid.hx)
        v = self.evaluate(rays.end_x, rays.end_y)
        return float(v.min()), float(v.max())

    def check_inflow(self, grid, n=257):
        """Raise unless the profile vanishes on faces the beam does not enter."""
        vx, vy = self.direction
        t = np.linspace(0.0, 1.0, n)
        faces = {
            (-1.0, 0.0): (0.0 * t, grid.Ly * t),
            (1.0, 0.0): (grid.Lx + 0.0 * t, grid.Ly * t),
            (0.0, -1.0): (grid.Lx * t, 0.0 * t),
            (0.0, 1.0): (grid.Lx * t, grid.Ly + 0.0 * t),
        }
        for (nx, ny), (px, py) in faces.items():
            if -(nx * vx + ny * vy) <= 1e-14 and np.any(self.evaluate(px, py) > 0):
                raise ValidationError("collimated profile is positive on a face the beam does not enter")


@dataclass(frozen=True, eq=False)
class PointSource:
    """Isotropic-in-space point illumination at ``x'`` on the boundary.

    ``strength`` is a constant or a callable of the direction ``(vx, vy)``;
    ``normal`` is the outward unit normal at ``x'``.
    """

    point: tuple
    normal: tuple
    strength: object = 1.0
    name: str = "point"

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if abs(np.hypot(*n) - 1.0) > 1e-12:
            raise ParameterError("normal must be a unit vector")

    def evaluate(self, vx, vy):
        if callable(self.strength):
            return np.asarray(self.strength(vx, vy), dtype=float) * np.ones(np.shape(vx))
        return np.full(np.shape(vx), float(self.strength))

    def flux_factor(self, vx, vy):
        """``g(v) |n . v|``."""
        nx, ny = self.normal
        return self.evaluate(vx, vy) * np.abs(nx * vx + ny * vy)


@dataclass
class AdmissibilityReport:
    """Smallness and contraction diagnostics for a source/medium pair.

    ``clause`` names the condition that admitted the source: ``"absorption"``
    (``g_max <= inf sigma_a/sigma_b``), ``"scattering"`` (only the
    ``2 theta_min inf sigma_s/sigma_b`` branch holds) or ``"none"``.
    """

    smallness_ok: bool
    clause: str
    g_min: float
    g_max: float
    inf_a_over_b: float
    scatter_bound: float
    mu: float
    kappa: float
    theta_min: float
    theta_max: float
    contraction: float
    collimated_ok: bool

    def to_dict(self):
        return {k: (float(v) if isinstance(v, (np.floating, float)) else v)
                for k, v in self.__dict__.items()}


def _inf_ratio(num, den):
    num = np.asarray(num)
    den = np.asarray(den)
    mask = den > 0
    if not np.any(mask):
        return float("inf")
    return float(np.min(num[mask] / den[mask]))


def check_source_smallness(g, coeffs, step=None):
    """Evaluate the source smallness condition and the contraction constant.

    Parameters
    ----------
    g : GeneralSource or CollimatedSource
    coeffs : CoefficientSet
    """
    grid = coeffs.grid
    g_min, g_max = g.bounds(grid, coeffs.angles, step)
    sa = coeffs.sigma_a.values
    sb = coeffs.sigma_b.values
    ss = coeffs.sigma_s.values
    th_min = coeffs.kernel.theta_min
    th_max = coeffs.kernel.theta_max
    a_over_b = _inf_ratio(sa, sb)
    scattering = not coeffs.scattering_free
    s_bound = 2.0 * th_min * _inf_ratio(ss, sb) if scattering else 0.0
    if g_min <= 0:
        clause = "none"
    elif g_max <= a_over_b:
        clause = "absorption"
    elif scattering and g_max <= s_bound:
        clause = "scattering"
    else:
        clause = "none"
    tot = sa + ss
    if np.any(tot <= 0):
        mu = 1.0 if scattering else 0.0
        kappa = float("inf") if np.any(sb > 0) else 0.0
    else:
        mu = float(np.max(ss / tot))
        kappa = float(np.max(sb / tot))
    if mu < 1.0:
        contraction = (1.0 + (mu * mu * th_max / (1.0 - mu) + mu)
                       + mu * th_max / (1.0 - mu) ** 2) * kappa * g_max
    else:
        contraction = float("inf")
    return AdmissibilityReport(
        smallness_ok=clause != "none", clause=clause, g_min=g_min, g_max=g_max,
        inf_a_over_b=a_over_b, scatter_bound=s_bound, mu=mu, kappa=kappa,
        theta_min=th_min, theta_max=th_max, contraction=float(contraction),
        collimated_ok=bool(contraction < 1.0))


def _gate(ok, message, cfg):
    if ok:
        return
    if cfg.warn_only:
        warnings.warn(message, AdmissibilityWarning, stacklevel=3)
    else:
        raise ParameterError(message + " (set warn_only=True to proceed anyway)")


@dataclass
class SemilinearResult:
    u: PhaseField
    u_avg: ScalarField
    gaps: list
    residual: float
    report: AdmissibilityReport = None
    inner_iterations: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.gaps)


def _initial_m(m0, grid, g_max):
    if m0 is None or (isinstance(m0, str) and m0 == "zero"):
        return np.zeros(grid.shape)
    if isinstance(m0, str) and m0 == "gbar":
        return np.full(grid.shape, float(g_max))
    return np.array(getattr(m0, "values", m0), dtype=float) * np.ones(grid.shape)


def solve_semilinear_detailed(coeffs, g, cfg, m0=None, check=True):
    """Outer fixed point on ``m = <u>`` for a general boundary source.

    Parameters
    ----------
    coeffs : CoefficientSet
    g : GeneralSource
    cfg : SemilinearConfig
    m0 : {"zero", "gbar"} or array_like, optional
        Starting average.
    check : bool
        Evaluate the smallness condition first.

    Returns
    -------
    SemilinearResult
    """
    report = None
    if check:
        report = check_source_smallness(g, coeffs, cfg.inner.ray_step)
        _gate(report.smallness_ok, "boundary source fails the smallness condition", cfg)
    g_max = g.bounds(coeffs.grid, coeffs.angles, cfg.inner.ray_step)[1]
    sa = coeffs.sigma_a.values
    sb = coeffs.sigma_b.values
    m = _initial_m(m0, coeffs.grid, g_max)
    linear = not np.any(sb)
    gaps, inner = [], []
    u = None
    for _ in range(int(cfg.max_outer_iters)):
        # the linear problem is solved in one pass, so it gets the full tolerance
        icfg = cfg.inner if linear else cfg.inner_for(gaps[-1] if gaps else 1.0)
        res = solve_linear_detailed(sa + sb * m, coeffs, g, icfg, u0=u)
        u = res.u
        inner.append(res.iterations)
        m_new = angular_average(u).values
        gap = float(np.max(np.abs(m_new - m)))
        gaps.append(gap)
        m = m_new
        if gap < cfg.tol_fixed_point:
            break
        if linear:
            gaps.append(0.0)
            break
    else:
        raise ConvergenceError(
            f"outer iteration did not reach {cfg.tol_fixed_point:.1e} in {cfg.max_outer_iters} steps",
            gaps[-1], gaps)
    check_res = solve_linear_detailed(sa + sb * m, coeffs, g, cfg.inner, u0=u)
    residual = float(np.max(np.abs(check_res.u.values - u.values)))
    return SemilinearResult(u, ScalarField(coeffs.grid, m), gaps, residual, report, inner)


def solve_semilinear(coeffs, g, cfg, m0=None):
    """Solve the semilinear problem; returns the PhaseField ``u``."""
    return solve_semilinear_detailed(coeffs, g, cfg, m0=m0).u


# ------------------------------------------------------------- collimated

def beam_rays(grid, src, step):
    """Backward rays along the beam direction from every cell center."""
    X, Y = grid.centers()
    vx, vy = src.direction
    ox = X.ravel().copy()
    oy = Y.ravel().copy()
    dx = np.full(ox.size, vx)
    dy = np.full(ox.size, vy)
    length = tau_minus(ox, oy, dx, dy, grid.Lx, grid.Ly)
    return RaySet(ox, oy, dx, dy, length, np.zeros(ox.size, dtype=np.int64), float(step))


@dataclass
class CollimatedSolution:
    """Ballistic (delta) part and regular scattered part of a beam solution."""

    ballistic: ScalarField
    scattered: PhaseField
    gaps: list = field(default_factory=list)
    report: AdmissibilityReport = None
    scattered_bound: float = float("inf")

    @property
    def average(self):
        """``<u>``: the delta integrates to the ballistic scalar."""
        return ScalarField(self.ballistic.grid,
                           self.ballistic.values + angular_average(self.scattered).values)

    @property
    def iterations(self):
        return len(self.gaps)


def solve_semilinear_collimated(coeffs, src, cfg, m0=None, check=True):
    """Outer fixed point for a collimated beam.

    The ballistic part is ``g(x') exp(-int Sigma_t)`` along the beam with
    ``Sigma_t = sigma_a + sigma_s + sigma_b m``; the scattered part solves
    the transport problem with zero inflow and internal source
    ``sigma_s Theta(v, v') ballistic``.
    """
    grid = coeffs.grid
    angles = coeffs.angles
    report = check_source_smallness(src, coeffs, cfg.inner.ray_step)
    if check:
        _gate(report.collimated_ok, "collimated source fails the contraction condition", cfg)
    rays = beam_rays(grid, src, cfg.inner.ray_step)
    g_in = src.evaluate(rays.end_x, rays.end_y).reshape(grid.shape)
    sa = coeffs.sigma_a.values
    sb = coeffs.sigma_b.values
    ss = coeffs.sigma_s.values
    scattering = not coeffs.scattering_free
    col = coeffs.kernel.column(src.theta)
    theta_bar = max(coeffs.kernel.theta_max, float(col.max()))
    zero = GeneralSource.constant(0.0)
    m = _initial_m(m0, grid, report.g_max)
    us = None
    us_avg = np.zeros(grid.shape)
    linear = not np.any(sb)
    gaps = []
    for _ in range(int(cfg.max_outer_iters)):
        op = RayOperator(sa + ss + sb * m, rays, grid, memory_budget=0)
        ball = g_in * op.attenuation.reshape(grid.shape)
        if scattering:
            f = (ss * ball)[:, :, None] * col[None, None, :]
            icfg = cfg.inner if linear else cfg.inner_for(gaps[-1] if gaps else 1.0)
            res = solve_linear_detailed(sa + sb * m, coeffs, zero, icfg, f=f, u0=us)
            us = res.u
            us_avg = angular_average(us).values
        m_new = ball + us_avg
        gap = float(np.max(np.abs(m_new - m)))
        gaps.append(gap)
        m = m_new
        if gap < cfg.tol_fixed_point:
            break
        if linear:
            gaps.append(0.0)
            break
    else:
        raise ConvergenceError(
            f"collimated outer iteration did not reach {cfg.tol_fixed_point:.1e}", gaps[-1], gaps)
    if us is None:
        us = PhaseField.constant(grid, angles, 0.0)
    mu = report.mu
    bound = mu * report.g_max * theta_bar / (1.0 - mu) if mu < 1 else float("inf")
    slack = 10.0 * cfg.inner.tol_source + 1e-12 * bound
    if us.max() > bound + slack:
        raise ValidationError(
            f"scattered component {us.max():.6g} exceeds the a-priori bound {bound:.6g}")
    return CollimatedSolution(ScalarField(grid, ball), us, gaps, report, bound)


def bernoulli_profile(t, g0, sigma_a, sigma_b):
    """``<u>`` along a beam in a homogeneous non-scattering medium."""
    t = np.asarray(t, dtype=float)
    if sigma_b == 0:
        return g0 * np.exp(-sigma_a * t)
    r = sigma_b / sigma_a
    return 1.0 / ((1.0 / g0 + r) * np.exp(sigma_a * t) - r)


# ---------------------------------------------------------------- point

def point_rays(grid, src, step):
    """Rays from every cell center straight back to the source point."""
    X, Y = grid.centers()
    ox = X.ravel().copy()
    oy = Y.ravel().copy()
    px, py = (float(c) for c in src.point)
    rx = ox - px
    ry = oy - py
    length = np.hypot(rx, ry)
    if np.any(length == 0):
        raise ParameterError("point source coincides with a cell center")
    return RaySet(ox, oy, rx / length, ry / length, length,
                  np.zeros(ox.size, dtype=np.int64), float(step))


def solve_semilinear_point(coeffs, src, cfg, m0=None):
    """Non-scattering medium lit by a boundary point source (d = 2).

    ``<u>(x) = g(v)|n.v| exp(-int (sigma_a + sigma_b <u>)) / |x - x'|`` with
    ``v = (x - x') / |x - x'|``, solved by fixed point on ``<u>``.

    Returns
    -------
    SemilinearResult
        ``u`` is None: the angular distribution is a delta in ``v``.
    """
    if not coeffs.scattering_free:
        raise ParameterError("the point-source model is implemented for sigma_s = 0 only")
    grid = coeffs.grid
    rays = point_rays(grid, src, cfg.inner.ray_step)
    amp = (src.flux_factor(rays.dx, rays.dy) / rays.length).reshape(grid.shape)
    sa = coeffs.sigma_a.values
    sb = coeffs.sigma_b.values
    m = np.zeros(grid.shape) if m0 is None else _initial_m(m0, grid, 0.0)
    gaps = []
    for _ in range(int(cfg.max_outer_iters)):
        op = RayOperator(sa + sb * m, rays, grid, memory_budget=0)
        m_new = amp * op.attenuation.reshape(grid.shape)
        gap = float(np.max(np.abs(m_new - m)))
        gaps.append(gap)
        m = m_new
        if gap < cfg.tol_fixed_point:
            break
    else:
        raise ConvergenceError("point-source outer iteration did not converge", gaps[-1], gaps)
    return SemilinearResult(None, ScalarField(grid, m), gaps, gaps[-1], None)
