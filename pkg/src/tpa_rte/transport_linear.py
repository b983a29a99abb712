"""Linear transport by long characteristics and source iteration.

Solves ``v . grad u + (Sigma_a + sigma_s) u = sigma_s K u + f`` with
``u = g`` on the inflow boundary.  Every cell center is connected to the
boundary by one backward ray per ordinate; the attenuation along each ray is
computed once per solve and reused by all source-iteration sweeps.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .exceptions import ConvergenceError, ParameterError, SubcriticalityError
from .fields import PhaseField, ScalarField
from .geometry import ordinate_rays

__all__ = [
    "LinearSolveConfig",
    "GeneralSource",
    "LinearSolveResult",
    "RayOperator",
    "ballistic_solution",
    "lift_source",
    "solve_linear",
    "solve_linear_internal_source",
    "solve_linear_detailed",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearSolveConfig:
    """Quadrature and stopping parameters of the linear solver.

    Parameters
    ----------
    ray_step : float
        Largest spacing between samples along a characteristic.
    tol_source : float
        Sup-norm tolerance on successive source-iteration iterates.  Since
        one sweep is a contraction, this also bounds the residual.
    max_source_iters : int
    memory_budget : float
        Bytes allowed for caching per-sample attenuation coefficients.
        Above the budget the exponentials are recomputed every sweep.
    """

    ray_step: float = 1e-2
    tol_source: float = 1e-10
    max_source_iters: int = 1000
    memory_budget: float = 1.5e9

    def __post_init__(self):
        if not self.ray_step > 0:
            raise ParameterError("ray_step must be positive")
        if not self.tol_source > 0:
            raise ParameterError("tol_source must be positive")
        if int(self.max_source_iters) < 1:
            raise ParameterError("max_source_iters must be at least 1")


def _const_func(value):
    def g(px, py, vx, vy):
        return np.full(np.broadcast(px, py, vx, vy).shape, value)
    return g


@dataclass(frozen=True, eq=False)
class GeneralSource:
    """Boundary source ``g(x, v)`` on the inflow boundary.

    Parameters
    ----------
    func : callable
        ``func(px, py, vx, vy)`` returning boundary values at points
        ``(px, py)`` on the boundary for inward directions ``(vx, vy)``;
        must broadcast over array arguments.
    g_min, g_max : float, optional
        Known bounds.  When omitted they are measured on the boundary points
        reached by the discrete rays (see :meth:`bounds`).
    """

    func: object
    g_min: float = None
    g_max: float = None
    name: str = "general"

    @classmethod
    def constant(cls, value, name=None):
        value = float(value)
        return cls(_const_func(value), value, value, name or f"constant({value})")

    @property
    def is_constant(self):
        return self.g_min is not None and self.g_min == self.g_max

    def evaluate(self, px, py, vx, vy):
        return np.asarray(self.func(px, py, vx, vy), dtype=float)

    def boundary_values(self, rays):
        return self.evaluate(rays.end_x, rays.end_y, rays.dx, rays.dy)

    def bounds(self, grid=None, angles=None, step=None):
        """``(g_min, g_max)``, measured on the discrete inflow set if needed."""
        if self.g_min is not None and self.g_max is not None:
            return float(self.g_min), float(self.g_max)
        if grid is None or angles is None:
            raise ParameterError("source bounds unknown; pass grid and angles")
        rays = ordinate_rays(grid, angles, step or grid.hx)
        vals = self.boundary_values(rays)
        lo = float(vals.min()) if self.g_min is None else float(self.g_min)
        hi = float(vals.max()) if self.g_max is None else float(self.g_max)
        return lo, hi


class RayOperator:
    """Attenuation and lift along a fixed ray set for one ``Sigma_t``.

    Per-sample lift coefficients are cached when they fit in the memory
    budget, which turns each later lift into a plain weighted gather.
    """

    def __init__(self, sigma_t, rays, grid, memory_budget=1.5e9):
        self.sig = np.ascontiguousarray(sigma_t, dtype=float)
        self.rays = rays
        self.grid = grid
        r = rays
        self.depth = np.empty(len(r))
        self._cached = r.n_samples * 8 <= memory_budget
        if self._cached:
            self.coef = np.empty(r.n_samples)
            K.ray_coefficients(self.sig, r.ox, r.oy, r.dx, r.dy, r.length, r.nseg,
                               r.offsets, grid.hx, grid.hy, self.coef, self.depth)
        else:
            self.coef = None
            K.ray_depth(self.sig, r.ox, r.oy, r.dx, r.dy, r.length, r.nseg,
                        grid.hx, grid.hy, self.depth)
        self.attenuation = np.exp(-self.depth)

    def lift(self, q, qidx=None):
        """Lift of sources ``q`` shaped ``(nq, ny, nx)``; ray r reads q[qidx[r]]."""
        r = self.rays
        q = np.ascontiguousarray(q, dtype=float)
        qidx = r.qidx if qidx is None else qidx
        out = np.empty(len(r))
        if self._cached:
            K.ray_apply(q, qidx, r.ox, r.oy, r.dx, r.dy, r.length, r.nseg, r.offsets,
                        self.coef, self.grid.hx, self.grid.hy, out)
        else:
            depth = np.empty(len(r))
            K.ray_lift(self.sig, q, qidx, r.ox, r.oy, r.dx, r.dy, r.length, r.nseg,
                       self.grid.hx, self.grid.hy, depth, out)
        return out


@dataclass
class LinearSolveResult:
    u: PhaseField
    iterations: int
    residuals: list = field(default_factory=list)

    @property
    def residual(self):
        return self.residuals[-1] if self.residuals else 0.0


def _values(f):
    return np.asarray(f.values if hasattr(f, "values") else f, dtype=float)


def ballistic_solution(Sigma_t, g, angles, cfg):
    """Attenuated transport of the boundary values, no scattering."""
    grid = Sigma_t.grid
    rays = ordinate_rays(grid, angles, cfg.ray_step)
    op = RayOperator(_values(Sigma_t), rays, grid, memory_budget=0)
    vals = g.boundary_values(rays) * op.attenuation
    return PhaseField(grid, angles, np.moveaxis(vals.reshape((angles.n_v,) + grid.shape), 0, -1))


def lift_source(Sigma_t, q, cfg):
    """``int_0^tau exp(-int_0^l Sigma_t) q(x - l v, v) dl`` for every (x, v_k)."""
    grid = Sigma_t.grid
    rays = ordinate_rays(grid, q.angles, cfg.ray_step)
    op = RayOperator(_values(Sigma_t), rays, grid, memory_budget=0)
    vals = op.lift(q.ordinate_major())
    return PhaseField(grid, q.angles, np.moveaxis(vals.reshape((q.angles.n_v,) + grid.shape), 0, -1))


def check_subcritical(Sigma_a, sigma_s):
    """Return ``sup sigma_s / (Sigma_a + sigma_s)`` or raise if it reaches one."""
    sa = _values(Sigma_a)
    ss = _values(sigma_s)
    if np.any(sa < 0) or np.any(ss < 0):
        raise ParameterError("absorption and scattering must be non-negative")
    mask = ss > 0
    if not np.any(mask):
        return 0.0
    ratio = float(np.max(ss[mask] / (sa[mask] + ss[mask])))
    if not ratio < 1.0:
        raise SubcriticalityError(
            "medium is not subcritical: sup sigma_s/(Sigma_a+sigma_s) = 1 "
            "(zero absorption where scattering is present)")
    return ratio


def solve_linear_detailed(Sigma_a, coeffs, g, cfg, f=None, u0=None):
    """Source iteration with diagnostics.

    Parameters
    ----------
    Sigma_a : ScalarField or ndarray
        Total absorption (for the semilinear model ``sigma_a + sigma_b m``).
    coeffs : CoefficientSet
        Supplies ``sigma_s`` and the kernel.
    g : GeneralSource
    cfg : LinearSolveConfig
    f : PhaseField or ndarray (ny, nx, n_v), optional
        Internal source.
    u0 : PhaseField or ndarray, optional
        Warm start for the scattering iteration.

    Returns
    -------
    LinearSolveResult
    """
    grid = coeffs.grid
    angles = coeffs.angles
    sa = _values(Sigma_a)
    ss = coeffs.sigma_s.values
    check_subcritical(sa, ss)
    rays = ordinate_rays(grid, angles, cfg.ray_step)
    op = RayOperator(sa + ss, rays, grid, cfg.memory_budget)
    shape = (angles.n_v,) + grid.shape

    b = g.boundary_values(rays) * op.attenuation
    if f is not None:
        fv = np.moveaxis(_values(f), -1, 0)
        b = b + op.lift(fv)
    b = b.reshape(shape)

    if coeffs.scattering_free:
        return LinearSolveResult(_phase(grid, angles, b), 1, [0.0])

    iso = coeffs.kernel.is_isotropic
    zero_idx = np.zeros(len(rays), dtype=np.int64)
    tw = coeffs.kernel.matrix * angles.weights[None, :]
    u = b if u0 is None else np.moveaxis(_values(u0), -1, 0)
    residuals = []
    for it in range(1, int(cfg.max_source_iters) + 1):
        if iso:
            q = (ss * np.tensordot(angles.weights, u, axes=(0, 0)))[None]
            lifted = op.lift(q, zero_idx)
        else:
            q = ss[None] * np.tensordot(tw, u, axes=(1, 0))
            lifted = op.lift(q)
        u_new = b + lifted.reshape(shape)
        res = float(np.max(np.abs(u_new - u)))
        residuals.append(res)
        u = u_new
        if res < cfg.tol_source:
            return LinearSolveResult(_phase(grid, angles, u), it, residuals)
    raise ConvergenceError(
        f"source iteration did not reach {cfg.tol_source:.1e} in {cfg.max_source_iters} sweeps "
        f"(last residual {residuals[-1]:.3e})", residuals[-1], residuals)


def _phase(grid, angles, u_om):
    return PhaseField(grid, angles, np.moveaxis(u_om, 0, -1))


def solve_linear(Sigma_a, coeffs, g, cfg):
    """Solve the linear transport problem; returns the PhaseField ``u``."""
    return solve_linear_detailed(Sigma_a, coeffs, g, cfg).u


def solve_linear_internal_source(Sigma_a, coeffs, g, f, cfg):
    """As :func:`solve_linear` with an additional internal source ``f``."""
    return solve_linear_detailed(Sigma_a, coeffs, g, cfg, f=f).u
