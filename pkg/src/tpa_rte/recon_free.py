"""Explicit reconstruction of (sigma_a, sigma_b) without scattering.

Without scattering the density along a beam obeys
``d phi / dt = -(sigma_a phi + sigma_b phi^2) = -H``, so ``phi`` is the
source value minus the line integral of the data.  Two sources of
different strength then give a 2x2 system per cell.
"""
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .exceptions import DataInconsistencyError, ParameterError
from .fields import ScalarField
from .forward_semilinear import CollimatedSource, PointSource, beam_rays, point_rays

__all__ = [
    "RayFamily",
    "RecoveredDensity",
    "ReconPair",
    "DataInconsistencyWarning",
    "recover_density_collimated",
    "recover_density_point",
    "solve_pointwise_pair",
    "separation_fraction",
    "relative_errors",
]

NEG_TOL = -1e-10


class DataInconsistencyWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class RayFamily:
    """One backward ray per cell: entry point ``x'`` and arc length ``t``."""

    rays: object
    entry: np.ndarray
    t: np.ndarray

    @classmethod
    def collimated(cls, grid, src, step):
        r = beam_rays(grid, src, step)
        return cls(r, np.column_stack([r.end_x, r.end_y]), r.length.reshape(grid.shape))

    @classmethod
    def point(cls, grid, src, step):
        r = point_rays(grid, src, step)
        return cls(r, np.column_stack([r.end_x, r.end_y]), r.length.reshape(grid.shape))

    def integrate(self, values, grid):
        """Trapezoid line integral of a cell-centered field over each ray."""
        r = self.rays
        out = np.empty(len(r))
        K.ray_depth(np.ascontiguousarray(values, dtype=float), r.ox, r.oy, r.dx, r.dy,
                    r.length, r.nseg, grid.hx, grid.hy, out)
        return out.reshape(grid.shape)


@dataclass(frozen=True, eq=False)
class RecoveredDensity:
    """Density ``phi`` with cells where recovery was declined masked."""

    phi: ScalarField
    mask: np.ndarray
    t: np.ndarray

    @property
    def values(self):
        return self.phi.values


def _default_step(grid):
    return 0.5 * min(grid.hx, grid.hy)


def _finish(phi, excluded, grid, t):
    bad = phi < NEG_TOL
    if np.any(bad & ~excluded):
        warnings.warn(f"recovered density negative on {int(np.sum(bad & ~excluded))} cells; masked",
                      DataInconsistencyWarning, stacklevel=3)
    mask = excluded | (phi <= 0)
    return RecoveredDensity(ScalarField(grid, np.where(mask, 0.0, phi)), mask, t)


def recover_density_collimated(H, src, step=None):
    """``phi(t) = g(x') - int_0^t H(x' + s v') ds`` at every cell center.

    Parameters
    ----------
    H : InternalDatum or ScalarField
    src : CollimatedSource
    step : float, optional
        Quadrature spacing; defaults to half a cell.

    Returns
    -------
    RecoveredDensity
    """
    if not isinstance(src, CollimatedSource):
        raise ParameterError("a collimated source is required")
    Hf = getattr(H, "H", H)
    grid = Hf.grid
    fam = RayFamily.collimated(grid, src, step or _default_step(grid))
    g0 = src.evaluate(fam.entry[:, 0], fam.entry[:, 1]).reshape(grid.shape)
    phi = g0 - fam.integrate(Hf.values, grid)
    return _finish(phi, np.zeros(grid.shape, dtype=bool), grid, fam.t)


def recover_density_point(H, src, epsilon, step=None):
    """``phi(t) = (g(v)|n.v| - int_0^t H(x' + s v) s ds) / t`` (d = 2).

    Along a radial ray ``|n.v|`` is constant, so the weighted integral is
    evaluated as ``|n.v| int_0^t Q ds`` with the cell-centered field
    ``Q(x) = H(x) |x - x'| / |n.v(x)|``.  ``Q`` is bounded and smooth up to
    the source and up to the face carrying it, whereas ``H`` blows up at
    ``x'`` and vanishes along the face; interpolating ``Q`` keeps the
    quadrature second order.  Cells closer than ``epsilon`` to the source
    are excluded.
    """
    if not isinstance(src, PointSource):
        raise ParameterError("a point source is required")
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    Hf = getattr(H, "H", H)
    grid = Hf.grid
    fam = RayFamily.point(grid, src, step or _default_step(grid))
    r = fam.rays
    t = fam.t
    nx, ny = src.normal
    cos = np.abs(nx * r.dx + ny * r.dy).reshape(grid.shape)
    if np.any(cos <= 0):
        raise DataInconsistencyError("a cell center lies on the face carrying the source")
    strength = src.evaluate(r.dx, r.dy).reshape(grid.shape)
    Q = Hf.values * t / cos
    phi = cos * (strength - fam.integrate(Q, grid)) / t
    return _finish(phi, t < epsilon, grid, t)


@dataclass(frozen=True, eq=False)
class ReconPair:
    """Recovered coefficient pair; masked cells hold zeros."""

    sigma_a_rec: ScalarField
    sigma_b_rec: ScalarField
    conditioning: ScalarField
    mask: np.ndarray

    @property
    def masked_fraction(self):
        return float(np.mean(self.mask))


def _values(x):
    x = getattr(x, "H", x)
    x = getattr(x, "phi", x)
    return np.asarray(getattr(x, "values", x), dtype=float)


def _grid_of(*objs):
    for o in objs:
        for attr in ("H", "phi"):
            o = getattr(o, attr, o)
        g = getattr(o, "grid", None)
        if g is not None:
            return g
    raise ParameterError("cannot determine the grid of the inputs")


def solve_pointwise_pair(phi1, phi2, H1, H2, det_floor=None, source_gap=None, mask=None):
    """Solve ``[phi1 phi1^2; phi2 phi2^2] [sa; sb] = [H1; H2]`` per cell.

    Parameters
    ----------
    det_floor : float, optional
        Cells with ``|phi1 - phi2| < det_floor`` are masked.  Defaults to
        ``1e-8 * source_gap``.
    source_gap : float, optional
        Separation of the two source strengths.
    mask : ndarray of bool, optional
        Cells already excluded (for instance by density recovery).
    """
    p1, p2, h1, h2 = (_values(a) for a in (phi1, phi2, H1, H2))
    grid = _grid_of(H1, phi1)
    if det_floor is None:
        if source_gap is None:
            raise ParameterError("give det_floor or source_gap")
        det_floor = 1e-8 * abs(source_gap)
    for d in (phi1, phi2):
        m = getattr(d, "mask", None)
        if m is not None:
            mask = m if mask is None else (mask | m)
    sep = np.abs(p1 - p2)
    masked = sep < det_floor
    if mask is not None:
        masked = masked | mask
    if np.all(masked):
        raise DataInconsistencyError("every cell is masked; the two data sets cannot be separated")
    det = np.where(masked, 1.0, p1 * p2 * (p2 - p1))
    sa = (h1 * p2 * p2 - h2 * p1 * p1) / det
    sb = (p1 * h2 - p2 * h1) / det
    sa = np.where(masked, 0.0, sa)
    sb = np.where(masked, 0.0, sb)
    return ReconPair(ScalarField(grid, sa), ScalarField(grid, sb), ScalarField(grid, sep), masked)


def separation_fraction(d1, d2):
    """Fraction of jointly unmasked cells with ``phi1 > phi2``."""
    mask = d1.mask | d2.mask
    if np.all(mask):
        return float("nan")
    return float(np.mean((d1.values > d2.values)[~mask]))


def relative_errors(rec, truth_a, truth_b, region=None):
    """Relative sup and L2 errors of a ReconPair on unmasked cells.

    ``region`` optionally restricts the comparison further (boolean array of
    cells to include).
    """
    keep = ~rec.mask
    if region is not None:
        keep = keep & region
    out = {}
    for key, rec_f, tru in (("sigma_a", rec.sigma_a_rec, truth_a), ("sigma_b", rec.sigma_b_rec, truth_b)):
        tv = np.asarray(getattr(tru, "values", tru))
        d = (rec_f.values - tv)[keep]
        ref = np.max(np.abs(tv[keep]))
        out[key] = {
            "rel_sup": float(np.max(np.abs(d)) / ref),
            "rel_l2": float(np.sqrt(np.mean(d * d)) / np.sqrt(np.mean(tv[keep] ** 2))),
        }
    out["masked_fraction"] = float(1.0 - np.mean(keep))
    return out
