"""Phase-space discretization of a rectangle times the unit circle.

The spatial domain is ``[0, Lx] x [0, Ly]`` with cell-centered values.
Directions are the midpoint ordinates ``theta_k = 2 pi (k + 1/2) / n_v``
with equal weights ``1 / n_v`` so that the angular measure is normalized.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._kernels import bilinear, segment_counts
from .exceptions import DomainError, ParameterError

__all__ = [
    "SpatialGrid",
    "AngularGrid",
    "RaySet",
    "trace_to_boundary",
    "tau_minus",
    "sample_ray",
    "interpolate",
    "ordinate_rays",
]


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform cell-centered grid on ``[0, Lx] x [0, Ly]``.

    Arrays defined on the grid have shape ``(ny, nx)``: the first index runs
    along ``y`` and the second along ``x``.
    """

    Lx: float
    Ly: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (np.isfinite(self.Lx) and np.isfinite(self.Ly)):
            raise ParameterError("domain lengths must be finite")
        if self.Lx <= 0 or self.Ly <= 0:
            raise ParameterError(f"domain lengths must be positive, got {self.Lx}, {self.Ly}")
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ParameterError("cell counts must be integers")
        if self.nx < 2 or self.ny < 2:
            raise ParameterError(f"need at least 2 cells per axis, got {self.nx}x{self.ny}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "Lx", float(self.Lx))
        object.__setattr__(self, "Ly", float(self.Ly))

    @property
    def hx(self):
        return self.Lx / self.nx

    @property
    def hy(self):
        return self.Ly / self.ny

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny

    @property
    def diam(self):
        return float(np.hypot(self.Lx, self.Ly))

    @property
    def x(self):
        return (np.arange(self.nx) + 0.5) * self.hx

    @property
    def y(self):
        return (np.arange(self.ny) + 0.5) * self.hy

    def centers(self):
        """Cell-center coordinate arrays ``(X, Y)`` of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y)

    def refine(self, factor):
        return SpatialGrid(self.Lx, self.Ly, self.nx * factor, self.ny * factor)

    def contains(self, px, py, closed=True):
        px = np.asarray(px)
        py = np.asarray(py)
        if closed:
            return (px >= 0) & (px <= self.Lx) & (py >= 0) & (py <= self.Ly)
        return (px > 0) & (px < self.Lx) & (py > 0) & (py < self.Ly)

    def to_dict(self):
        return {"Lx": self.Lx, "Ly": self.Ly, "nx": self.nx, "ny": self.ny}


@dataclass(frozen=True)
class AngularGrid:
    """Midpoint discrete ordinates on the unit circle."""

    n_v: int

    def __post_init__(self):
        if int(self.n_v) != self.n_v or self.n_v < 1:
            raise ParameterError(f"n_v must be a positive integer, got {self.n_v}")
        object.__setattr__(self, "n_v", int(self.n_v))

    @cached_property
    def theta(self):
        return 2.0 * np.pi * (np.arange(self.n_v) + 0.5) / self.n_v

    @cached_property
    def directions(self):
        """Unit vectors, shape ``(n_v, 2)``."""
        return np.column_stack([np.cos(self.theta), np.sin(self.theta)])

    @cached_property
    def weights(self):
        return np.full(self.n_v, 1.0 / self.n_v)

    def opposite(self, k):
        """Index of the ordinate pointing opposite to ``k`` (even ``n_v``)."""
        if self.n_v % 2:
            raise ParameterError("opposite ordinates need an even n_v")
        return (k + self.n_v // 2) % self.n_v


def tau_minus(px, py, vx, vy, Lx, Ly):
    """Vectorized backward distance to the boundary of the rectangle.

    Points are assumed to lie in the closed rectangle.  Broadcasting follows
    numpy rules.
    """
    px, py, vx, vy = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (px, py, vx, vy)))
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = np.where(vx > 0, px / vx, np.where(vx < 0, (px - Lx) / vx, np.inf))
        sy = np.where(vy > 0, py / vy, np.where(vy < 0, (py - Ly) / vy, np.inf))
    return np.maximum(np.minimum(sx, sy), 0.0)


def trace_to_boundary(x, v, grid):
    """Distance back along ``-v`` from ``x`` to the boundary and the hit point.

    Parameters
    ----------
    x : array_like, shape (2,)
        Point in the closed domain.
    v : array_like, shape (2,)
        Unit direction of travel.
    grid : SpatialGrid
        Supplies the domain extents.

    Returns
    -------
    tau : float
    x_boundary : ndarray, shape (2,)
        ``x - tau * v``.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != (2,) or v.shape != (2,):
        raise ParameterError("x and v must be 2-vectors")
    if abs(np.hypot(*v) - 1.0) > 1e-12:
        raise ParameterError("v must be a unit vector")
    if not grid.contains(x[0], x[1], closed=True):
        raise DomainError(f"point {tuple(x)} lies outside the domain")
    tau = float(tau_minus(x[0], x[1], v[0], v[1], grid.Lx, grid.Ly))
    xb = x - tau * v
    # snap round-off onto the face that was hit
    xb[0] = min(max(xb[0], 0.0), grid.Lx)
    xb[1] = min(max(xb[1], 0.0), grid.Ly)
    return tau, xb


def sample_ray(x, v, step, grid):
    """Uniform samples ``x - s v`` from ``s = 0`` to ``s = tau_minus``.

    The ray is cut into ``ceil(tau / step)`` equal pieces, so the spacing
    never exceeds ``step`` and the last sample lands exactly on the boundary.

    Returns
    -------
    s : ndarray
        Arc-length parameters.
    points : ndarray, shape (len(s), 2)
    """
    if not step > 0:
        raise ParameterError("step must be positive")
    tau, _ = trace_to_boundary(x, v, grid)
    if tau <= 0.0:
        raise DomainError("ray of zero length: the point lies on the inflow boundary")
    n = int(segment_counts(np.array([tau]), step)[0])
    s = np.linspace(0.0, tau, n + 1)
    pts = np.asarray(x, dtype=float)[None, :] - s[:, None] * np.asarray(v, dtype=float)[None, :]
    return s, pts


def interpolate(values, grid, px, py):
    """Clamped bilinear interpolation of a cell-centered array at points."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    shape = np.broadcast(px, py).shape
    fx = np.ascontiguousarray(np.broadcast_to(px, shape).ravel())
    fy = np.ascontiguousarray(np.broadcast_to(py, shape).ravel())
    out = np.empty(fx.size)
    bilinear(np.ascontiguousarray(values, dtype=float), fx, fy, grid.hx, grid.hy, out)
    return out.reshape(shape)


@dataclass(frozen=True, eq=False)
class RaySet:
    """Flat collection of backward rays ``o - s d``, ``0 <= s <= length``.

    ``qidx`` tells which source component each ray reads (the ordinate
    index for discrete-ordinate sweeps).
    """

    ox: np.ndarray
    oy: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    length: np.ndarray
    qidx: np.ndarray
    step: float

    @cached_property
    def nseg(self):
        return segment_counts(self.length, self.step)

    @cached_property
    def offsets(self):
        off = np.zeros(self.length.size + 1, dtype=np.int64)
        np.cumsum(self.nseg + 1, out=off[1:])
        return off

    @property
    def n_samples(self):
        return int(self.offsets[-1])

    @property
    def end_x(self):
        return self.ox - self.length * self.dx

    @property
    def end_y(self):
        return self.oy - self.length * self.dy

    def __len__(self):
        return self.length.size


_ORDINATE_CACHE = {}


def ordinate_rays(grid, angles, step):
    """Rays from every cell center along every ordinate.

    The flat order is ordinate-major: ray ``k * grid.size + c`` belongs to
    ordinate ``k`` and cell ``c`` (cells in row-major ``(ny, nx)`` order).
    """
    key = (grid, angles.n_v, float(step))
    rays = _ORDINATE_CACHE.get(key)
    if rays is not None:
        return rays
    X, Y = grid.centers()
    nc = grid.size
    d = angles.directions
    ox = np.tile(X.ravel(), angles.n_v)
    oy = np.tile(Y.ravel(), angles.n_v)
    dx = np.repeat(d[:, 0], nc)
    dy = np.repeat(d[:, 1], nc)
    length = tau_minus(ox, oy, dx, dy, grid.Lx, grid.Ly)
    qidx = np.repeat(np.arange(angles.n_v, dtype=np.int64), nc)
    rays = RaySet(ox, oy, dx, dy, length, qidx, float(step))
    if len(_ORDINATE_CACHE) > 8:
        _ORDINATE_CACHE.clear()
    _ORDINATE_CACHE[key] = rays
    return rays
