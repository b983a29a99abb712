"""Integral-operator view of isotropic scattering with a constant source.

For isotropic scattering and ``g == g_bar`` the angular average of the
solution with absorption ``H / m`` satisfies

    <u> = J_m g_bar + K_m(sigma_s <u>)

with the path exponential ``E_m(x, l, v) = exp(-int_0^l (H/m + sigma_s)(x - s v) ds)``.
The operators here are evaluated by direct quadrature with scipy and numpy,
independently of the characteristics kernels, so the two routes check each
other.  The map ``C(m) = <u>`` and the uniqueness and stability constants
built on it are also provided.
"""
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.ndimage import map_coordinates

from .exceptions import ConvergenceError, DivergenceError, DomainError, ParameterError
from .fields import ScalarField, angular_average, build_kernel
from .geometry import tau_minus, trace_to_boundary
from .recon_scatter import _tail, scattering_medium
from .transport_linear import GeneralSource, LinearSolveConfig, solve_linear_detailed

__all__ = [
    "IsotropicConstants",
    "CHistory",
    "path_exponential",
    "apply_J",
    "apply_K",
    "apply_JK",
    "iterate_C",
    "psi_uniqueness",
    "psi_stability",
    "uniqueness_certificate",
]

_CHUNK = 2_000_000


def _vals(f):
    return np.asarray(getattr(f, "values", f), dtype=float)


def _extinction(m, H, sigma_s):
    """Cell values of ``H / m + sigma_s``; requires ``m > 0``."""
    mv, Hv, sv = _vals(m), _vals(H), _vals(sigma_s)
    if np.any(mv <= 0) or not np.all(np.isfinite(mv)):
        raise DomainError("m must be positive and finite")
    return Hv / mv + sv


def _sample(field_values, grid, px, py):
    """Clamped bilinear interpolation of a cell-centered field."""
    coords = np.stack([np.asarray(py) / grid.hy - 0.5, np.asarray(px) / grid.hx - 0.5])
    return map_coordinates(field_values, coords.reshape(2, -1), order=1, mode="nearest",
                           prefilter=False).reshape(np.shape(px))


def path_exponential(m, H, sigma_s, x, v, l, step=1e-3):
    """``E_m(x, l, v)`` by trapezoid quadrature of the optical depth.

    Parameters
    ----------
    m, H, sigma_s : ScalarField
        On a common grid; ``m`` must be positive along the ray.
    x, v : array_like, shape (2,)
        Point and unit direction; the path runs from ``x`` backward along ``-v``.
    l : float
        Path length, ``0 <= l <= tau_minus(x, v)``.
    step : float
        Largest quadrature spacing.
    """
    grid = m.grid
    tau, _ = trace_to_boundary(x, v, grid)
    if not 0 <= l <= tau * (1 + 1e-12):
        raise DomainError(f"path length {l} outside [0, {tau}]")
    if l == 0:
        return 1.0
    n = max(1, int(np.ceil(l / step - 1e-12)))
    s = np.linspace(0.0, l, n + 1)
    px = x[0] - s * v[0]
    py = x[1] - s * v[1]
    if np.any(_sample(_vals(m), grid, px, py) <= 0):
        raise DomainError("m is not positive along the path")
    t = _sample(_extinction(m, H, sigma_s), grid, px, py)
    return float(np.exp(-np.trapezoid(t, s)))


def _ray_integrals(ext, f, grid, angles, step, need_k):
    """Per cell: ``sum_k w_k E(tau)`` and ``sum_k w_k int_0^tau E f dl``."""
    X, Y = grid.centers()
    px0, py0 = X.ravel(), Y.ravel()
    ncell = px0.size
    jsum = np.zeros(ncell)
    ksum = np.zeros(ncell)
    for (vx, vy), w in zip(angles.directions, angles.weights):
        tau = tau_minus(px0, py0, vx, vy, grid.Lx, grid.Ly)
        n = max(1, int(np.ceil(tau.max() / step - 1e-12)))
        frac = np.linspace(0.0, 1.0, n + 1)
        rows = max(1, _CHUNK // (n + 1))
        for a in range(0, ncell, rows):
            b = min(ncell, a + rows)
            s = tau[a:b, None] * frac[None, :]
            px = px0[a:b, None] - s * vx
            py = py0[a:b, None] - s * vy
            depth = cumulative_trapezoid(_sample(ext, grid, px, py), s, axis=1, initial=0.0)
            E = np.exp(-depth)
            jsum[a:b] += w * E[:, -1]
            if need_k:
                ksum[a:b] += w * np.trapezoid(E * _sample(f, grid, px, py), s, axis=1)
    return jsum.reshape(grid.shape), ksum.reshape(grid.shape)


def apply_J(m, H, sigma_s, g_bar, angles, step=1e-3):
    """``J_m g_bar = g_bar sum_k w_k E_m(x, tau_minus(x, v_k), v_k)`` at cell centers."""
    ext = _extinction(m, H, sigma_s)
    j, _ = _ray_integrals(ext, None, m.grid, angles, step, False)
    return ScalarField(m.grid, g_bar * j)


def apply_K(m, H, sigma_s, f, angles, step=1e-3):
    """``K_m f = sum_k w_k int_0^tau E_m(x, l, v_k) f(x - l v_k) dl`` at cell centers."""
    ext = _extinction(m, H, sigma_s)
    _, k = _ray_integrals(ext, _vals(f), m.grid, angles, step, True)
    return ScalarField(m.grid, k)


def apply_JK(m, H, sigma_s, g_bar, angles, step=1e-3):
    """``J_m g_bar + K_m(sigma_s m)`` from one pass over the rays."""
    ext = _extinction(m, H, sigma_s)
    j, k = _ray_integrals(ext, _vals(sigma_s) * _vals(m), m.grid, angles, step, True)
    return ScalarField(m.grid, g_bar * j + k)


# ------------------------------------------------------------------ map C

@dataclass
class CHistory:
    gaps: list
    increase: list
    decrease: list

    @property
    def iterations(self):
        return len(self.gaps)


def _C(m, H, medium, source, cfg, u0=None):
    sa = np.where(_vals(H) > 0, _vals(H) / m, 0.0)
    res = solve_linear_detailed(np.maximum(sa, 1e-12), medium, source, cfg, u0=u0)
    return angular_average(res.u).values, res.u


def iterate_C(m0, H, sigma_s, g_bar, angles, tol=1e-8, max_iters=200, inner=None,
              inexact_inner=1e-2, divergence_window=5):
    """Iterate ``m -> <u>``, ``u`` solving the linear problem with absorption ``H / m``.

    Parameters
    ----------
    m0 : ScalarField or float
        Start, positive; ``g_bar`` gives the non-increasing sequence, ``eta``
        the non-decreasing one.
    H, sigma_s : ScalarField
    g_bar : float
        Constant boundary source.
    angles : AngularGrid
    inner : LinearSolveConfig, optional

    Returns
    -------
    m : ScalarField
    history : CHistory
    """
    grid = H.grid
    inner = inner or LinearSolveConfig(tol_source=1e-12)
    m = np.broadcast_to(_vals(m0), grid.shape).astype(float)
    if np.any(m <= 0):
        raise DomainError("starting average must be positive")
    medium = scattering_medium(sigma_s, build_kernel(angles, "isotropic"))
    source = GeneralSource.constant(g_bar)
    gaps, ups, downs = [], [], []
    u = None
    for _ in range(int(max_iters)):
        # the first solve is cold, so it must be converged fully; later ones are
        # warm-started from the previous limit and may stop early
        tol_in = max(inner.tol_source, inexact_inner * gaps[-1]) if gaps else inner.tol_source
        m_new, u = _C(m, H, medium, source, replace(inner, tol_source=tol_in), u)
        d = m_new - m
        ups.append(float(max(d.max(), 0.0)))
        downs.append(float(max(-d.min(), 0.0)))
        gaps.append(float(np.max(np.abs(d))))
        m = m_new
        if gaps[-1] < tol and _tail(gaps) <= 0.5 * tol:
            return ScalarField(grid, m), CHistory(gaps, ups, downs)
        w = divergence_window
        if len(gaps) > w and all(gaps[-i] > gaps[-i - 1] for i in range(1, w + 1)):
            raise DivergenceError(f"gap grew for {w} consecutive steps", gaps[-1], gaps)
    raise ConvergenceError(f"map C did not reach {tol:.1e} in {max_iters} steps", gaps[-1], gaps)


# -------------------------------------------------------------- constants

def psi_uniqueness(alpha, beta, ell, g_bar):
    """``(1 + a b - a l b^2) / (2 - [1 - (1 - l) a] b) * g_bar``."""
    return (1 + alpha * beta - alpha * ell * beta ** 2) / (2 - (1 - (1 - ell) * alpha) * beta) * g_bar


def psi_stability(alpha, beta, ell, r, g_bar):
    """``(1 + a b - a l b^2) / (1 + r (1 - b) + (1 - l) a b) * g_bar``."""
    return (1 + alpha * beta - alpha * ell * beta ** 2) / (1 + r * (1 - beta) + (1 - ell) * alpha * beta) * g_bar


def _sup_ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(den > 0, num / den, 0.0)
    return float(np.max(q))


@dataclass
class IsotropicConstants:
    """Constants of the isotropic uniqueness and stability statements.

    Sups and infs are taken over cell centers, so they bound the continuum
    values from below.  ``applicable`` is False when the domain diameter
    exceeds 1; the numbers are still reported.
    """

    alpha: float
    beta: float
    ell: float
    g_bar: float
    psi_uniqueness: float
    eta_min: float
    verdict: bool
    applicable: bool
    mu_h: float = float("nan")
    mu_f: float = float("nan")
    kappa: float = float("nan")
    gamma: float = float("nan")
    r: float = float("nan")
    psi_stability: float = float("nan")
    stable: bool = False
    limits_gap: float = float("nan")
    lemma_bound_ok: bool = None
    lemma_bound_margin: float = float("nan")
    notes: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()}


def uniqueness_certificate(H, sigma_s, g_bar, eta, angles=None, tol=1e-8, inner=None,
                           step=1e-3, evaluate_limits=True):
    """Uniqueness and stability constants for isotropic scattering.

    Parameters
    ----------
    H, sigma_s, eta : ScalarField
    g_bar : float
    angles : AngularGrid, optional
        Needed when ``evaluate_limits`` is True.
    evaluate_limits : bool
        Also compute ``h = lim C^n(g_bar)`` and ``f = lim C^n(eta)`` and
        the constants that depend on them (``mu_h``, ``mu_f``, ``kappa``,
        ``gamma``, ``r``), and check ``J_h g_bar >= (h - mu_h)/(g_bar - mu_h) g_bar``.

    Returns
    -------
    IsotropicConstants
    """
    grid = H.grid
    Hv, sv, ev = _vals(H), _vals(sigma_s), _vals(eta)
    if g_bar <= 0:
        raise ParameterError("g_bar must be positive")
    if np.any(ev <= 0):
        raise DomainError("eta must be positive")
    ell = grid.diam
    notes = []
    applicable = ell <= 1.0
    if not applicable:
        notes.append(f"domain diameter {ell:.4g} exceeds 1; certificate inapplicable")
    a_ratio = Hv / ev
    alpha = _sup_ratio(a_ratio, a_ratio + sv)
    beta = _sup_ratio(sv, Hv / g_bar + sv)
    psi = psi_uniqueness(alpha, beta, ell, g_bar)
    eta_min = float(ev.min())
    out = IsotropicConstants(alpha, beta, ell, float(g_bar), psi, eta_min,
                             bool(applicable and psi <= eta_min), applicable, notes=notes)
    if not evaluate_limits:
        return out
    if angles is None:
        raise ParameterError("angles are required to evaluate the limits")
    h, _ = iterate_C(g_bar, H, sigma_s, g_bar, angles, tol, inner=inner)
    f, _ = iterate_C(eta, H, sigma_s, g_bar, angles, tol, inner=inner)
    hv, fv = h.values, f.values
    hi, lo = np.maximum(hv, fv), np.minimum(hv, fv)
    out.limits_gap = float(np.max(np.abs(hv - fv)))
    out.gamma = float(np.max(np.abs(hv - fv) / lo))
    out.kappa = _sup_ratio(Hv / hi, Hv / hi + sv)
    out.mu_f = _sup_ratio(sv * fv, Hv / hi + sv)
    out.mu_h = _sup_ratio(sv * hv, Hv / hv + sv)
    if beta < 1:
        r = (alpha * beta * (g_bar - (1 - ell) * (hv - beta * g_bar) / (1 - beta))
             + (g_bar - hv) / (1 - beta)) / hv
        out.r = float(max(np.max(r), 0.0))
        if out.r < 1:
            out.psi_stability = psi_stability(alpha, beta, ell, out.r, g_bar)
            out.stable = bool(applicable and out.psi_stability <= float(hv.min()))
    else:
        notes.append("beta = 1; stability margin undefined")
    if out.mu_h < g_bar:
        J = apply_J(h, H, sigma_s, g_bar, angles, step).values
        bound = (hv - out.mu_h) / (g_bar - out.mu_h) * g_bar
        out.lemma_bound_margin = float(np.min(J - bound))
        out.lemma_bound_ok = bool(out.lemma_bound_margin >= -1e-6 * g_bar)
    return out
