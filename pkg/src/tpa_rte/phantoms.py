"""Synthetic coefficient media.

A phantom is a grid-independent recipe: calling it with a spatial and an
angular grid samples the fields at cell centers and attaches the kernel.
This is what lets data be synthesized on a refined grid and compared on a
coarse one.
"""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ParameterError
from .fields import CoefficientSet, ScalarField, build_kernel

__all__ = ["Phantom", "make_phantom", "PHANTOM_NAMES"]

PHANTOM_NAMES = ("constant", "gaussian-inclusions", "checkerboard")
_FIELDS = ("sigma_a", "sigma_b", "sigma_s")


def _smoothstep(z):
    z = np.clip(z, 0.0, 1.0)
    return z * z * (3.0 - 2.0 * z)


@dataclass(frozen=True, eq=False)
class Phantom:
    """Recipe for a :class:`CoefficientSet`.

    Attributes
    ----------
    name : str
    funcs : dict
        ``sigma_a``, ``sigma_b``, ``sigma_s`` mapped to callables
        ``f(X, Y) -> array`` in physical coordinates.
    bounds : dict
        Declared bounds keyed ``"a"``, ``"b"``, ``"s"``.
    kernel : dict
        ``{"profile": ..., "g": ...}`` passed to :func:`build_kernel`.
    """

    name: str
    funcs: dict
    bounds: dict
    kernel: dict = field(default_factory=lambda: {"profile": "isotropic"})

    def __call__(self, grid, angles):
        X, Y = grid.centers()
        vals = {k: ScalarField(grid, np.broadcast_to(self.funcs[k](X, Y), grid.shape))
                for k in _FIELDS}
        kern = build_kernel(angles, self.kernel.get("profile", "isotropic"),
                            float(self.kernel.get("g", 0.0)))
        return CoefficientSet(vals["sigma_a"], vals["sigma_b"], vals["sigma_s"], kern,
                              dict(self.bounds))


def _number(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParameterError(f"{what} must be a number, got {v!r}")
    if not np.isfinite(v) or v < 0:
        raise ParameterError(f"{what} must be finite and non-negative, got {v}")
    return float(v)


def _constant(value):
    return lambda X, Y: np.full(np.shape(X), value)


def _inclusions(spec, what, rng, jitter, Lx, Ly):
    bg = _number(spec.get("background"), f"{what}.background")
    amp = _number(spec.get("amplitude", 0.0), f"{what}.amplitude")
    incs = spec.get("inclusions")
    if incs is None:
        incs = [{"center": [0.35 * Lx, 0.4 * Ly], "width": 0.15 * min(Lx, Ly)},
                {"center": [0.65 * Lx, 0.62 * Ly], "width": 0.12 * min(Lx, Ly)}]
    centers, widths = [], []
    for inc in incs:
        c = np.asarray(inc["center"], dtype=float)
        w = _number(inc["width"], f"{what}.width")
        if w <= 0:
            raise ParameterError(f"{what}: inclusion width must be positive")
        if jitter:
            c = c + jitter * rng.uniform(-1.0, 1.0, size=2) * np.array([Lx, Ly])
        centers.append(c)
        widths.append(w)
    cut = spec.get("cutoff")

    def f(X, Y):
        keep = np.ones(np.shape(X))
        for c, w in zip(centers, widths):
            keep = keep * (1.0 - np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2) / (2.0 * w * w)))
        val = bg + amp * (1.0 - keep)
        if cut is not None:
            r = np.hypot(X - cut["point"][0], Y - cut["point"][1])
            val = val * _smoothstep((r - cut["radius"]) / cut["width"])
        return val

    lo = 0.0 if cut is not None else bg
    return f, (lo, bg + amp)


def _checker(spec, what, tiles, Lx, Ly):
    lo = _number(spec.get("low"), f"{what}.low")
    hi = _number(spec.get("high"), f"{what}.high")
    if hi < lo:
        raise ParameterError(f"{what}: high must not be below low")

    def f(X, Y):
        ix = np.floor(np.asarray(X) / Lx * tiles).astype(int)
        iy = np.floor(np.asarray(Y) / Ly * tiles).astype(int)
        return np.where((ix + iy) % 2 == 0, lo, hi)

    return f, (lo, hi)


def make_phantom(name, params, rng=None, Lx=1.0, Ly=1.0):
    """Build a named phantom.

    Parameters
    ----------
    name : {"constant", "gaussian-inclusions", "checkerboard"}
    params : dict
        One entry per coefficient (``sigma_a``, ``sigma_b``, ``sigma_s``).
        A number gives a uniform field.  For ``gaussian-inclusions`` a dict
        ``{"background", "amplitude", "inclusions", "cutoff"}`` gives
        ``background + amplitude * (1 - prod_i (1 - G_i))`` with Gaussian
        bumps ``G_i``, which stays in ``[background, background + amplitude]``;
        the optional cutoff ``{"point", "radius", "width"}`` forces the field
        to zero within ``radius`` of a point.  For ``checkerboard`` a dict
        ``{"low", "high"}`` alternates on ``params["tiles"]`` tiles per axis.
        Optional keys: ``kernel`` (``{"profile", "g"}``) and ``jitter``
        (random shift of inclusion centers, fraction of the domain).
    rng : numpy.random.Generator, optional
        Stream used for the jitter.

    Returns
    -------
    Phantom
    """
    if name not in PHANTOM_NAMES:
        raise ParameterError(f"unknown phantom {name!r}; choose from {PHANTOM_NAMES}")
    params = dict(params)
    kernel = dict(params.pop("kernel", {"profile": "isotropic"}))
    jitter = float(params.pop("jitter", 0.0))
    tiles = int(params.pop("tiles", 4))
    if jitter and rng is None:
        raise ParameterError("jitter requires a random generator")
    if tiles < 2:
        raise ParameterError("checkerboard needs at least 2 tiles per axis")
    unknown = set(params) - set(_FIELDS)
    if unknown:
        raise ParameterError(f"unknown phantom parameters {sorted(unknown)}")
    funcs, bounds = {}, {}
    for key in _FIELDS:
        if key not in params:
            raise ParameterError(f"phantom parameter {key} is required")
        spec = params[key]
        short = key[-1]
        if isinstance(spec, dict):
            if name == "gaussian-inclusions":
                funcs[key], bounds[short] = _inclusions(spec, key, rng, jitter, Lx, Ly)
            elif name == "checkerboard":
                funcs[key], bounds[short] = _checker(spec, key, tiles, Lx, Ly)
            else:
                raise ParameterError("constant phantoms take numbers only")
        else:
            v = _number(spec, key)
            funcs[key], bounds[short] = _constant(v), (v, v)
    return Phantom(name, funcs, bounds, kernel)
