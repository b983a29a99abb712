"""Scalar and phase-space fields, scattering kernels and coefficient sets."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ParameterError, ValidationError
from .geometry import AngularGrid, SpatialGrid

__all__ = [
    "ScalarField",
    "PhaseField",
    "ScatteringKernel",
    "CoefficientSet",
    "angular_average",
    "apply_scattering",
    "build_kernel",
    "write_scalar_csv",
    "read_scalar_csv",
    "write_phase_csv",
    "read_phase_csv",
]

CSV_FMT = "%.17e"


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Cell-centered function of position, values shaped ``(ny, nx)``."""

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 0:
            v = np.full(self.grid.shape, float(v))
        if v.shape != self.grid.shape:
            raise ValidationError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("scalar field contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid, func):
        X, Y = grid.centers()
        return cls(grid, np.broadcast_to(func(X, Y), grid.shape))

    def min(self):
        return float(self.values.min())

    def max(self):
        return float(self.values.max())

    def with_values(self, values):
        return ScalarField(self.grid, values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True, eq=False)
class PhaseField:
    """Discrete ``u(x, v_k)``, values shaped ``(ny, nx, n_v)``."""

    grid: SpatialGrid
    angles: AngularGrid
    values: np.ndarray
    physical: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        shape = self.grid.shape + (self.angles.n_v,)
        if v.shape != shape:
            raise ValidationError(f"values shape {v.shape} does not match {shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("phase field contains non-finite values")
        if self.physical and v.min() < 0:
            raise ValidationError("physical phase field has negative entries")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def constant(cls, grid, angles, value):
        return cls(grid, angles, np.full(grid.shape + (angles.n_v,), float(value)))

    def min(self):
        return float(self.values.min())

    def max(self):
        return float(self.values.max())

    def ordinate_major(self):
        """Copy with layout ``(n_v, ny, nx)`` used by the sweep kernels."""
        return np.ascontiguousarray(np.moveaxis(self.values, -1, 0))


@dataclass(frozen=True, eq=False)
class ScatteringKernel:
    """Discrete phase function ``Theta[k, l]`` on an angular grid.

    ``profile`` is ``("isotropic", 0.0)``, ``("peaked", g)`` or
    ``("matrix", nan)``; it lets the kernel be evaluated against a direction
    that is not one of the ordinates (collimated beams).
    """

    angles: AngularGrid
    matrix: np.ndarray
    profile: tuple = ("matrix", float("nan"))
    tol: float = 1e-10

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        n = self.angles.n_v
        if m.shape != (n, n):
            raise ValidationError(f"kernel must be {n}x{n}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("kernel contains non-finite entries")
        if np.max(np.abs(m - m.T)) > self.tol:
            raise ValidationError("kernel is not symmetric")
        rows = m @ self.angles.weights
        if np.max(np.abs(rows - 1.0)) > self.tol:
            raise ValidationError(f"kernel rows are not normalized (max dev {np.max(np.abs(rows - 1)):.2e})")
        if m.min() <= 0:
            raise ValidationError("kernel must be strictly positive")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def theta_min(self):
        return float(self.matrix.min())

    @property
    def theta_max(self):
        return float(self.matrix.max())

    @property
    def is_isotropic(self):
        return bool(np.all(self.matrix == 1.0))

    def column(self, theta_prime):
        """Values ``Theta(v_k, v')`` for a direction at angle ``theta_prime``.

        The continuous profile is sampled and renormalized so that its
        discrete angular average is one, which keeps the scattered
        collimated field conservative.
        """
        kind, g = self.profile
        th = self.angles.theta
        if kind == "isotropic":
            return np.ones(self.angles.n_v)
        if kind == "peaked":
            col = _hg(th - theta_prime, g)
            return col / np.dot(self.angles.weights, col)
        diff = np.abs(np.angle(np.exp(1j * (th - theta_prime))))
        k = int(np.argmin(diff))
        if diff[k] > 1e-12:
            raise ParameterError("raw kernel matrices can only be evaluated on an ordinate")
        return self.matrix[:, k].copy()


def _hg(dtheta, g):
    return (1.0 - g * g) / (1.0 + g * g - 2.0 * g * np.cos(dtheta))


def build_kernel(angles, profile="isotropic", g=0.0):
    """Symmetric, discretely normalized kernel from a named profile.

    Parameters
    ----------
    angles : AngularGrid
    profile : {"isotropic", "peaked"}
    g : float
        Anisotropy of the peaked profile, ``0 <= g < 1``.
    """
    if profile == "isotropic":
        return ScatteringKernel(angles, np.ones((angles.n_v, angles.n_v)), ("isotropic", 0.0))
    if profile != "peaked":
        raise ParameterError(f"unknown kernel profile {profile!r}")
    if not (0.0 <= g < 1.0):
        raise ParameterError(f"peaked kernel needs 0 <= g < 1, got {g}")
    if g == 0.0:
        return ScatteringKernel(angles, np.ones((angles.n_v, angles.n_v)), ("isotropic", 0.0))
    th = angles.theta
    w = angles.weights
    m = _hg(th[:, None] - th[None, :], g)
    m /= (m @ w)[:, None]
    m = 0.5 * (m + m.T)
    for _ in range(50):
        dev = np.max(np.abs(m @ w - 1.0))
        if dev <= 1e-12:
            break
        # symmetric diagonal scaling keeps symmetry while fixing row sums
        d = 1.0 / np.sqrt(m @ w)
        m = d[:, None] * m * d[None, :]
    return ScatteringKernel(angles, m, ("peaked", float(g)))


def angular_average(u):
    """``sum_k w_k u(x, v_k)`` as a ScalarField."""
    return ScalarField(u.grid, u.values @ u.angles.weights)


def apply_scattering(kernel, u):
    """``(K u)(x, v_k) = sum_l w_l Theta[k, l] u(x, v_l)``."""
    tw = kernel.matrix * kernel.angles.weights[None, :]
    return PhaseField(u.grid, u.angles, u.values @ tw.T)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Absorption, two-photon absorption and scattering fields with bounds.

    ``bounds`` maps ``"a"``, ``"b"``, ``"s"`` to ``(lower, upper)``.  When
    omitted the bounds are the extrema of the fields.
    """

    sigma_a: ScalarField
    sigma_b: ScalarField
    sigma_s: ScalarField
    kernel: ScatteringKernel
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        b = dict(self.bounds)
        for name, f in (("a", self.sigma_a), ("b", self.sigma_b), ("s", self.sigma_s)):
            if f.grid != self.sigma_a.grid:
                raise ValidationError("coefficient fields live on different grids")
            lo, hi = b.get(name, (f.min(), f.max()))
            lo, hi = float(lo), float(hi)
            if lo < 0 or hi < lo:
                raise ValidationError(f"bounds for sigma_{name} must satisfy 0 <= lower <= upper")
            slack = 1e-12 * max(1.0, abs(hi))
            if f.min() < lo - slack or f.max() > hi + slack:
                raise ValidationError(f"sigma_{name} violates its declared bounds [{lo}, {hi}]")
            b[name] = (lo, hi)
        object.__setattr__(self, "bounds", b)

    @property
    def grid(self):
        return self.sigma_a.grid

    @property
    def angles(self):
        return self.kernel.angles

    @property
    def scattering_free(self):
        return bool(np.all(self.sigma_s.values == 0.0))

    def replace(self, **kw):
        args = dict(sigma_a=self.sigma_a, sigma_b=self.sigma_b, sigma_s=self.sigma_s,
                    kernel=self.kernel, bounds=None)
        args.update(kw)
        if args["bounds"] is None:
            args["bounds"] = {}
        return CoefficientSet(**args)


# ---------------------------------------------------------------- CSV I/O

def _header_check(path, expected):
    with open(path) as fh:
        head = fh.readline().strip()
    if head != expected:
        raise ValidationError(f"{path}: expected header {expected!r}, got {head!r}")


def write_scalar_csv(f, path):
    """Write ``x,y,value`` rows, y outermost, full precision."""
    X, Y = f.grid.centers()
    data = np.column_stack([X.ravel(), Y.ravel(), f.values.ravel()])
    np.savetxt(path, data, fmt=CSV_FMT, delimiter=",", header="x,y,value", comments="")


def write_phase_csv(u, path):
    """Write ``x,y,theta,value`` rows ordered by y, then x, then ordinate."""
    X, Y = u.grid.centers()
    nv = u.angles.n_v
    data = np.column_stack([
        np.repeat(X.ravel(), nv),
        np.repeat(Y.ravel(), nv),
        np.tile(u.angles.theta, u.grid.size),
        u.values.ravel(),
    ])
    np.savetxt(path, data, fmt=CSV_FMT, delimiter=",", header="x,y,theta,value", comments="")


def _infer_grid(x, y):
    xs = np.unique(x)
    ys = np.unique(y)
    nx, ny = xs.size, ys.size
    return SpatialGrid(2.0 * xs[0] * nx, 2.0 * ys[0] * ny, nx, ny)


def _check_coords(grid, x, y):
    X, Y = grid.centers()
    tol = 1e-9 * max(grid.hx, grid.hy)
    if x.size != X.size or np.max(np.abs(x - X.ravel())) > tol or np.max(np.abs(y - Y.ravel())) > tol:
        raise ValidationError("CSV coordinates do not match the grid")


def read_scalar_csv(path, grid=None):
    """Load a ScalarField written by :func:`write_scalar_csv`."""
    path = Path(path)
    _header_check(path, "x,y,value")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    x, y, v = data.T
    if grid is None:
        grid = _infer_grid(x, y)
    _check_coords(grid, x, y)
    return ScalarField(grid, v.reshape(grid.shape))


def read_phase_csv(path, grid=None, angles=None):
    """Load a PhaseField written by :func:`write_phase_csv`."""
    path = Path(path)
    _header_check(path, "x,y,theta,value")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    x, y, th, v = data.T
    if angles is None:
        angles = AngularGrid(np.unique(th).size)
    nv = angles.n_v
    if grid is None:
        grid = _infer_grid(x[::nv], y[::nv])
    _check_coords(grid, x[::nv], y[::nv])
    if np.max(np.abs(th[:nv] - angles.theta)) > 1e-12:
        raise ValidationError("CSV ordinates do not match the angular grid")
    return PhaseField(grid, angles, v.reshape(grid.shape + (nv,)))
