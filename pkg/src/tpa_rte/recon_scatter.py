"""Reconstruction with known scattering.

Given one datum ``H`` the clamped fixed point

    Sigma_a^k = H / max(<u_{k-1}>, eta),   u_k = linear solve with Sigma_a^k

recovers ``<u>`` and ``Sigma_a = sigma_a + sigma_b <u> = H / <u>``.  Two data
from sources of different strength then separate ``sigma_a`` and
``sigma_b`` through the 2x2 system ``[1 <u_1>; 1 <u_2>]``.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data_synthesis import add_noise, synthesize_on_refined
from .exceptions import (ConvergenceError, DataInconsistencyError, DivergenceError,
                         ParameterError)
from .fields import CoefficientSet, ScalarField, angular_average
from .recon_free import ReconPair
from .transport_linear import LinearSolveConfig, solve_linear_detailed

__all__ = [
    "ScatterReconConfig",
    "Bracket",
    "PiAlphaReport",
    "FixedPointResult",
    "StabilityTable",
    "scattering_medium",
    "compute_eta",
    "compute_bracket",
    "fixed_point_recover_u",
    "recover_pair_scatter",
    "check_pi_alpha",
    "stability_probe",
]

log = logging.getLogger(__name__)

ABSORPTION_FLOOR = 1e-12


@dataclass(frozen=True)
class ScatterReconConfig:
    """A-priori bounds and iteration controls.

    Parameters
    ----------
    sigma_a_max, sigma_b_max, sigma_a_min, sigma_b_min : float
        Bounds on the unknown coefficients.
    g_max : float
        Upper bound of the boundary source.
    tol_fp : float
        Sup-norm tolerance on successive averages.
    monotone_slack : float
        Changes smaller than this in the "wrong" direction are attributed to
        rounding and not counted as monotonicity violations.
    inexact_inner : float
        Inner tolerance is ``max(inner.tol_source, inexact_inner * gap)``.
        Truncated sweeps keep the sequences monotone: warm-started from the
        previous iterate, source iteration moves pointwise toward the next
        iterate without overshooting it.
    """

    sigma_a_max: float
    sigma_b_max: float
    g_max: float
    sigma_a_min: float = 0.0
    sigma_b_min: float = 0.0
    tol_fp: float = 1e-8
    max_iters: int = 200
    inner: LinearSolveConfig = field(default_factory=lambda: LinearSolveConfig(tol_source=1e-12))
    alpha_report: bool = True
    divergence_window: int = 5
    monotone_slack: float = 1e-10
    inexact_inner: float = 1e-2

    def __post_init__(self):
        if not (0 <= self.sigma_a_min <= self.sigma_a_max and self.sigma_a_max > 0):
            raise ParameterError("need 0 <= sigma_a_min <= sigma_a_max, sigma_a_max > 0")
        if not (0 <= self.sigma_b_min <= self.sigma_b_max):
            raise ParameterError("need 0 <= sigma_b_min <= sigma_b_max")
        if not self.g_max > 0:
            raise ParameterError("g_max must be positive")
        if not self.tol_fp > 0:
            raise ParameterError("tol_fp must be positive")
        if not 0 <= self.inexact_inner < 1:
            raise ParameterError("inexact_inner must lie in [0, 1)")

    @property
    def sigma_total_max(self):
        """``sigma_a_max + sigma_b_max * g_max``, the largest possible Sigma_a."""
        return self.sigma_a_max + self.sigma_b_max * self.g_max


def scattering_medium(sigma_s, kernel):
    """CoefficientSet carrying only the known scattering."""
    grid = sigma_s.grid
    zero = ScalarField.constant(grid, 0.0)
    return CoefficientSet(zero, zero, sigma_s, kernel)


def _H(H):
    return getattr(H, "H", H)


def compute_eta(H, cfg):
    """``eta = H / (sigma_a_max + sigma_b_max g_max)``."""
    Hf = _H(H)
    return Hf.with_values(Hf.values / cfg.sigma_total_max)


def _absorption(H, m):
    with np.errstate(divide="ignore", invalid="ignore"):
        sa = np.where(H > 0, H / m, 0.0)
    return np.maximum(sa, ABSORPTION_FLOOR)


@dataclass
class Bracket:
    """Averages of the two extremal linear solves."""

    u_min_avg: ScalarField
    u_max_avg: ScalarField
    a2_holds: bool
    degenerate: np.ndarray
    u_min: object = None
    u_max: object = None


def compute_bracket(H, g, medium, cfg):
    """Extremal solutions: absorption ``H / g_max`` and ``sigma_total_max``.

    Parameters
    ----------
    H : InternalDatum or ScalarField
    g : GeneralSource
    medium : CoefficientSet
        Only ``sigma_s`` and the kernel are used.
    cfg : ScatterReconConfig
    """
    Hv = _H(H).values
    if np.any(Hv < 0):
        raise ParameterError("internal data must be non-negative")
    degenerate = Hv <= 0
    sa_max = _absorption(Hv, cfg.g_max)
    up = solve_linear_detailed(sa_max, medium, g, cfg.inner).u
    lo = solve_linear_detailed(np.full(Hv.shape, cfg.sigma_total_max), medium, g, cfg.inner).u
    lo_avg = angular_average(lo)
    up_avg = angular_average(up)
    eta = Hv / cfg.sigma_total_max
    return Bracket(lo_avg, up_avg, bool(np.all(eta <= lo_avg.values)), degenerate, lo, up)


@dataclass
class FixedPointResult:
    """Outcome of :func:`fixed_point_recover_u`.

    ``increase``/``decrease`` hold, per step, the largest pointwise rise and
    fall of ``<u_k>``; ``clamp_counts`` the number of cells where the clamp
    ``max(<u_{k-1}>, eta)`` selected ``eta``.
    """

    u: object
    u_avg: ScalarField
    Sigma_a: ScalarField
    gaps: list
    clamp_counts: list
    increase: list
    decrease: list
    clipped: np.ndarray
    start: str
    bracket: Bracket = None
    bracket_excursion: float = 0.0

    @property
    def iterations(self):
        return len(self.gaps)

    def monotone_violations(self, direction, slack=1e-10):
        """Steps that moved against ``direction`` ("down" or "up") by more than slack."""
        seq = self.increase if direction == "down" else self.decrease
        return int(sum(1 for v in seq if v > slack))


def _tail(gaps):
    """Geometric estimate of the distance from the last iterate to the limit."""
    if len(gaps) < 2 or gaps[-2] <= 0:
        return gaps[-1]
    rho = gaps[-1] / gaps[-2]
    return gaps[-1] * rho / (1.0 - rho) if rho < 1 else float("inf")


def fixed_point_recover_u(H, g, sigma_s, kernel, cfg, start="max", bracket=None):
    """Recover ``<u>`` and ``Sigma_a`` from one datum.

    Parameters
    ----------
    H : InternalDatum or ScalarField
    g : GeneralSource
    sigma_s : ScalarField
    kernel : ScatteringKernel
    cfg : ScatterReconConfig
    start : {"max", "min"} or PhaseField
        ``"max"`` starts from ``u_max^H`` (absorption ``H / g_max``),
        ``"min"`` from ``u_min`` (absorption ``sigma_total_max``).
    bracket : Bracket, optional
        Reused when given, otherwise computed.

    Notes
    -----
    Iteration stops once the gap is below ``tol_fp`` and the geometric
    tail estimate ``gap rho / (1 - rho)`` is below ``tol_fp / 2``, so limits
    reached from opposite sides agree to ``tol_fp``.

    Returns
    -------
    FixedPointResult
    """
    Hf = _H(H)
    Hv = Hf.values
    if np.any(Hv < 0):
        raise ParameterError("internal data must be non-negative")
    medium = scattering_medium(sigma_s, kernel)
    eta = Hv / cfg.sigma_total_max
    if bracket is None:
        bracket = compute_bracket(Hf, g, medium, cfg)
    if isinstance(start, str):
        if start == "max":
            u = bracket.u_max
        elif start == "min":
            u = bracket.u_min
        else:
            raise ParameterError(f"unknown start {start!r}")
        label = start
    else:
        u = start
        label = "custom"
    m = angular_average(u).values
    lo, hi = bracket.u_min_avg.values, bracket.u_max_avg.values
    excursion = 0.0
    gaps, clamps, ups, downs = [], [], [], []
    for _ in range(int(cfg.max_iters)):
        clamps.append(int(np.sum(m < eta)))
        sa = _absorption(Hv, np.maximum(m, eta))
        tol = max(cfg.inner.tol_source, cfg.inexact_inner * (gaps[-1] if gaps else 1.0))
        res = solve_linear_detailed(sa, medium, g, replace(cfg.inner, tol_source=tol), u0=u)
        u = res.u
        m_new = angular_average(u).values
        d = m_new - m
        ups.append(float(max(d.max(), 0.0)))
        downs.append(float(max(-d.min(), 0.0)))
        excursion = max(excursion, float(np.max(lo - m_new)), float(np.max(m_new - hi)))
        gap = float(np.max(np.abs(d)))
        gaps.append(gap)
        m = m_new
        if gap < cfg.tol_fp and _tail(gaps) <= 0.5 * cfg.tol_fp:
            break
        w = cfg.divergence_window
        if len(gaps) > w and all(gaps[-i] > gaps[-i - 1] for i in range(1, w + 1)):
            raise DivergenceError(
                f"fixed-point gap grew for {w} consecutive steps (last {gap:.3e})", gap, gaps)
    else:
        raise ConvergenceError(
            f"fixed point did not reach {cfg.tol_fp:.1e} in {cfg.max_iters} steps", gaps[-1], gaps)
    lo_sa = Hv / cfg.g_max
    with np.errstate(divide="ignore", invalid="ignore"):
        sa = np.where(Hv > 0, Hv / m, ABSORPTION_FLOOR)
    clipped = (sa < lo_sa * (1 - 1e-12)) | (sa > cfg.sigma_total_max * (1 + 1e-12))
    if np.any(clipped):
        log.warning("Sigma_a outside its a-priori range on %d cells; clipped", int(clipped.sum()))
        sa = np.clip(sa, lo_sa, cfg.sigma_total_max)
    return FixedPointResult(u, ScalarField(Hf.grid, m), ScalarField(Hf.grid, sa), gaps, clamps,
                            ups, downs, clipped, label, bracket, excursion)


def recover_pair_scatter(H1, H2, g1, g2, sigma_s, kernel, cfg, det_floor=None,
                         results=None, start="max"):
    """Recover ``(sigma_a, sigma_b)`` from two data with known scattering.

    Parameters
    ----------
    results : pair of FixedPointResult, optional
        Previously computed recoveries to reuse.

    Returns
    -------
    pair : ReconPair
    results : tuple of FixedPointResult
    """
    if results is None:
        r1 = fixed_point_recover_u(H1, g1, sigma_s, kernel, cfg, start=start)
        r2 = fixed_point_recover_u(H2, g2, sigma_s, kernel, cfg, start=start)
    else:
        r1, r2 = results
    if det_floor is None:
        det_floor = 1e-6 * cfg.g_max
    pair = solve_scatter_pair(r1.Sigma_a, r2.Sigma_a, r1.u_avg, r2.u_avg, det_floor,
                              extra_mask=r1.clipped | r2.clipped | (_H(H1).values <= 0)
                              | (_H(H2).values <= 0))
    return pair, (r1, r2)


def solve_scatter_pair(Sa1, Sa2, m1, m2, det_floor, extra_mask=None):
    """Solve ``[1 m1; 1 m2] [sa; sb] = [Sa1; Sa2]`` per cell."""
    s1, s2, u1, u2 = (np.asarray(getattr(a, "values", a), dtype=float) for a in (Sa1, Sa2, m1, m2))
    grid = next(a.grid for a in (Sa1, Sa2, m1, m2) if hasattr(a, "grid"))
    sep = np.abs(u1 - u2)
    masked = sep < det_floor
    if extra_mask is not None:
        masked = masked | extra_mask
    if np.all(masked):
        raise DataInconsistencyError("every cell is masked; the averages cannot be separated")
    den = np.where(masked, 1.0, u1 - u2)
    sb = np.where(masked, 0.0, (s1 - s2) / den)
    sa = np.where(masked, 0.0, s1 - sb * u1)
    return ReconPair(ScalarField(grid, sa), ScalarField(grid, sb), ScalarField(grid, sep), masked)


@dataclass
class PiAlphaReport:
    alpha_estimate: float
    member: bool
    beta_estimate: float
    beta_ok: bool
    excluded_cells: int
    notes: list = field(default_factory=list)

    @property
    def a_prime(self):
        return self.member and self.beta_ok

    def to_dict(self):
        return {"alpha_estimate": self.alpha_estimate, "member": self.member,
                "beta_estimate": self.beta_estimate, "beta_ok": self.beta_ok,
                "excluded_cells": self.excluded_cells, "notes": list(self.notes)}


def _boundary_samples(grid):
    """Midpoints of boundary cell faces with outward normals and the cell index."""
    x, y = grid.x, grid.y
    pts = []
    for i, xi in enumerate(x):
        pts.append((xi, 0.0, 0.0, -1.0, 0, i))
        pts.append((xi, grid.Ly, 0.0, 1.0, grid.ny - 1, i))
    for j, yj in enumerate(y):
        pts.append((0.0, yj, -1.0, 0.0, j, 0))
        pts.append((grid.Lx, yj, 1.0, 0.0, j, grid.nx - 1))
    return np.array(pts)


def check_pi_alpha(Sigma_a, H, g, angles, sigma_a_max):
    """Estimate the Pi_alpha margin and the boundary constant beta.

    ``alpha = min_{x, k} Sigma_a - (v.grad Sigma_a)/Sigma_a + (v.grad H)/H``
    with second-order central differences (one-sided at the boundary), and
    ``beta = sigma_a_max * sup g H / Sigma_a`` over boundary faces and
    incoming ordinates, using the boundary-cell values of ``H / Sigma_a``.
    """
    grid = Sigma_a.grid
    sa = Sigma_a.values
    Hv = _H(H).values
    ok = (sa > 0) & (Hv > 0)
    notes = []
    if not np.all(ok):
        notes.append(f"{int(np.sum(~ok))} cells with zero Sigma_a or H excluded")
    if not np.any(ok):
        raise DataInconsistencyError("no cell with positive Sigma_a and H")
    dsa_y, dsa_x = np.gradient(sa, grid.hy, grid.hx, edge_order=2)
    dH_y, dH_x = np.gradient(Hv, grid.hy, grid.hx, edge_order=2)
    alpha = np.inf
    for vx, vy in angles.directions:
        with np.errstate(divide="ignore", invalid="ignore"):
            val = sa - (vx * dsa_x + vy * dsa_y) / sa + (vx * dH_x + vy * dH_y) / Hv
        alpha = min(alpha, float(np.min(val[ok])))
    b = _boundary_samples(grid)
    j = b[:, 4].astype(int)
    i = b[:, 5].astype(int)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(ok[j, i], Hv[j, i] / sa[j, i], 0.0)
    beta = 0.0
    for vx, vy in angles.directions:
        inflow = b[:, 2] * vx + b[:, 3] * vy < 0
        if not np.any(inflow):
            continue
        gv = g.evaluate(b[inflow, 0], b[inflow, 1], vx, vy)
        beta = max(beta, float(np.max(np.abs(gv * ratio[inflow]))))
    beta *= sigma_a_max
    return PiAlphaReport(alpha, bool(alpha > 0), beta, bool(beta < 1), int(np.sum(~ok)), notes)


# ---------------------------------------------------------------- stability

@dataclass
class StabilityTable:
    """Rows of the stability experiment.

    Each row has ``level``, ``seed``, ``data_err`` (relative L2 of the
    perturbation of both data), ``coef_err`` (relative L2 error of the
    stacked coefficients against the truth), ``above_floor`` (relative L2
    distance to the noise-free reconstruction) and ``status``.
    """

    rows: list
    baseline: float

    def ratios(self):
        """Per seed, ``above_floor(level) / above_floor(2 * level)``."""
        out = []
        ok_rows = [r for r in self.rows if r["status"] == "ok" and r["level"] > 0]
        by = {(r["seed"], r["level"]): r for r in ok_rows}
        for (seed, lev), r in sorted(by.items()):
            nxt = by.get((seed, 2 * lev))
            if nxt is not None and nxt["above_floor"] > 0:
                out.append({"seed": seed, "level": lev,
                            "ratio": r["above_floor"] / nxt["above_floor"]})
        return out

    def to_rows(self):
        return list(self.rows)


def _l2(a):
    return float(np.sqrt(np.mean(np.square(a))))


def stability_probe(phantom, g_pair, grid, angles, forward_cfg, recon_cfg,
                    noise_levels=(0.005, 0.01, 0.02), seeds=(0, 1), factor=2, data=None):
    """Noise-to-error table for the two-source scattering reconstruction.

    Parameters
    ----------
    phantom : callable
        ``phantom(grid, angles) -> CoefficientSet`` (truth).
    g_pair : tuple of GeneralSource
    forward_cfg : SemilinearConfig
        Used for refined synthesis.
    recon_cfg : ScatterReconConfig
    seeds : sequence of int
        Each seed drives both data sets through separate spawned streams.
    data : tuple of InternalDatum, optional
        Pre-synthesized clean data.

    Returns
    -------
    StabilityTable
    """
    truth = phantom(grid, angles)
    if data is None:
        data = tuple(synthesize_on_refined(phantom, g, grid, angles, forward_cfg, factor)
                     for g in g_pair)
    tv = np.concatenate([truth.sigma_a.values.ravel(), truth.sigma_b.values.ravel()])
    tnorm = _l2(tv)
    hnorm = _l2(np.concatenate([d.values.ravel() for d in data]))

    def run(ds):
        pair, _ = recover_pair_scatter(ds[0], ds[1], g_pair[0], g_pair[1], truth.sigma_s,
                                       truth.kernel, recon_cfg)
        return np.concatenate([pair.sigma_a_rec.values.ravel(), pair.sigma_b_rec.values.ravel()])

    clean = run(data)
    baseline = _l2(clean - tv) / tnorm
    rows = [{"level": 0.0, "seed": -1, "data_err": 0.0, "coef_err": baseline,
             "above_floor": 0.0, "status": "ok"}]
    for seed in seeds:
        ss = np.random.SeedSequence(int(seed))
        streams = ss.spawn(len(data))
        for level in noise_levels:
            noisy = tuple(add_noise(d, level, np.random.default_rng(s))
                          for d, s in zip(data, _clone(streams)))
            derr = _l2(np.concatenate([(n.values - d.values).ravel()
                                       for n, d in zip(noisy, data)])) / hnorm
            row = {"level": float(level), "seed": int(seed), "data_err": derr}
            try:
                rec = run(noisy)
                row.update(coef_err=_l2(rec - tv) / tnorm, above_floor=_l2(rec - clean) / tnorm,
                           status="ok")
            except (ConvergenceError, DataInconsistencyError, ParameterError) as exc:
                row.update(coef_err=float("nan"), above_floor=float("nan"),
                           status=f"failed: {exc}")
            rows.append(row)
    return StabilityTable(rows, baseline)


def _clone(seqs):
    # fresh SeedSequence objects with the same state, so every noise level
    # reuses the same draw for a given seed
    return [np.random.SeedSequence(s.entropy, spawn_key=s.spawn_key) for s in seqs]
