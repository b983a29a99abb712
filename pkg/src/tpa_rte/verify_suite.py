"""Small property suite run by the ``verify`` subcommand.

Every check runs on a coarse grid in a few seconds and writes its fields
through the run's staging area, so two runs with one seed can be compared
file by file.
"""
import time

import numpy as np

from .data_synthesis import synthesize_on_refined
from .fields import ScalarField, read_scalar_csv, write_scalar_csv
from .forward_semilinear import (CollimatedSource, SemilinearConfig, bernoulli_profile,
                                 solve_semilinear_collimated, solve_semilinear_detailed)
from .geometry import AngularGrid, SpatialGrid, tau_minus
from .phantoms import make_phantom
from .transport_linear import GeneralSource, LinearSolveConfig, ballistic_solution

__all__ = ["run_suite", "suite_phantom"]


def suite_phantom(rng, sigma_s=1.0):
    """Jittered smooth phantom used by the suite."""
    return make_phantom("gaussian-inclusions", {
        "sigma_a": {"background": 1.0, "amplitude": 0.5},
        "sigma_b": {"background": 0.3, "amplitude": 0.3,
                    "inclusions": [{"center": [0.6, 0.35], "width": 0.15}]},
        "sigma_s": sigma_s,
        "jitter": 0.05,
    }, rng=rng)


def _check(passed, **values):
    return {"passed": bool(passed), **values}


def _ballistic(n, nv):
    grid, angles = SpatialGrid(1.0, 1.0, n, n), AngularGrid(nv)
    u = ballistic_solution(ScalarField.constant(grid, 1.0), GeneralSource.constant(1.0), angles,
                           LinearSolveConfig(ray_step=1e-3)).values
    X, Y = grid.centers()
    vx, vy = angles.directions.T
    exact = np.exp(-tau_minus(X[..., None], Y[..., None], vx, vy, 1.0, 1.0))
    err = float(np.max(np.abs(u - exact)))
    return _check(err <= 1e-6, sup_error=err)


def _bernoulli(n, nv):
    grid, angles = SpatialGrid(1.0, 1.0, n, n), AngularGrid(nv)
    c = make_phantom("constant", {"sigma_a": 1.0, "sigma_b": 0.5, "sigma_s": 0.0})(grid, angles)
    sol = solve_semilinear_collimated(c, CollimatedSource(0.5, 0.0),
                                      SemilinearConfig(tol_fixed_point=1e-12,
                                                       inner=LinearSolveConfig(ray_step=0.5 / n)))
    X, _ = grid.centers()
    err = float(np.max(np.abs(sol.average.values - bernoulli_profile(X, 0.5, 1.0, 0.5))))
    return _check(err <= 1e-3, sup_error=err)


def _positivity(ctx, n, nv, count=3):
    grid, angles = SpatialGrid(1.0, 1.0, n, n), AngularGrid(nv)
    cfg = SemilinearConfig(tol_fixed_point=1e-10, inner=LinearSolveConfig(ray_step=0.5 / n, tol_source=1e-12))
    g = GeneralSource.constant(1.0)
    out = {"violations": 0, "gap_two_starts": 0.0}
    for k in range(count):
        c = suite_phantom(ctx.streams.generator(f"verify/phantom/{k}"))(grid, angles)
        r0 = solve_semilinear_detailed(c, g, cfg, m0="zero")
        r1 = solve_semilinear_detailed(c, g, cfg, m0="gbar")
        b = c.bounds
        floor = np.exp(-(b["a"][1] + b["s"][1] + b["b"][1]) * grid.diam) - 1e-8
        u = r0.u.values
        bad = np.sum(u <= 0) + np.sum(u > 1.0 + 1e-12) + np.sum(r0.u_avg.values < floor)
        out["violations"] += int(bad)
        out["gap_two_starts"] = max(out["gap_two_starts"], float(np.max(np.abs(r0.u_avg.values - r1.u_avg.values))))
        ctx.staging.scalar(f"verify_u_avg_{k}.csv", r0.u_avg)
    out["passed"] = out["violations"] == 0 and out["gap_two_starts"] <= 2e-8
    return out


def _recon_free(ctx, n, nv):
    from .recon_free import (recover_density_collimated, relative_errors, separation_fraction,
                             solve_pointwise_pair)
    grid, angles = SpatialGrid(1.0, 1.0, n, n), AngularGrid(nv)
    ph = suite_phantom(ctx.streams.generator("verify/phantom/free"), sigma_s=0.0)
    cfg = SemilinearConfig(tol_fixed_point=1e-12, inner=LinearSolveConfig(ray_step=0.5 / n))
    s1, s2 = CollimatedSource(1.0, 0.0, name="g1"), CollimatedSource(0.6, 0.0, name="g2")
    d1, d2 = (synthesize_on_refined(ph, s, grid, angles, cfg) for s in (s1, s2))
    p1, p2 = recover_density_collimated(d1, s1), recover_density_collimated(d2, s2)
    rec = solve_pointwise_pair(p1, p2, d1, d2, source_gap=0.4)
    truth = ph(grid, angles)
    err = relative_errors(rec, truth.sigma_a, truth.sigma_b)
    sep = separation_fraction(p1, p2)
    ctx.staging.scalar("verify_H_free_1.csv", d1.H)
    ctx.staging.scalar("verify_H_free_2.csv", d2.H)
    ctx.staging.scalar("verify_sigma_a_free.csv", rec.sigma_a_rec)
    ctx.staging.scalar("verify_sigma_b_free.csv", rec.sigma_b_rec)
    worst = max(err["sigma_a"]["rel_sup"], err["sigma_b"]["rel_sup"])
    return _check(worst <= 0.05 and sep == 1.0, rel_sup=worst, separation=sep)


def _recon_scatter(ctx, n, nv):
    from .recon_free import relative_errors
    from .recon_scatter import ScatterReconConfig, fixed_point_recover_u, recover_pair_scatter
    grid, angles = SpatialGrid(1.0, 1.0, n, n), AngularGrid(nv)
    ph = suite_phantom(ctx.streams.generator("verify/phantom/scatter"), sigma_s=2.0)
    step = 0.5 / n
    cfg = SemilinearConfig(tol_fixed_point=1e-11, inner=LinearSolveConfig(ray_step=step, tol_source=1e-12))
    g1, g2 = GeneralSource.constant(1.0, "g1"), GeneralSource.constant(0.6, "g2")
    d1, d2 = (synthesize_on_refined(ph, g, grid, angles, cfg) for g in (g1, g2))
    truth = ph(grid, angles)
    rc = ScatterReconConfig(1.5, 0.6, 1.0, sigma_a_min=1.0, sigma_b_min=0.3,
                            inner=LinearSolveConfig(ray_step=step, tol_source=1e-12))
    r1 = fixed_point_recover_u(d1, g1, truth.sigma_s, truth.kernel, rc, "max")
    r2 = fixed_point_recover_u(d2, g2, truth.sigma_s, truth.kernel, rc, "max")
    rmin = fixed_point_recover_u(d1, g1, truth.sigma_s, truth.kernel, rc, "min", bracket=r1.bracket)
    rec, _ = recover_pair_scatter(d1, d2, g1, g2, truth.sigma_s, truth.kernel, rc, results=(r1, r2))
    err = relative_errors(rec, truth.sigma_a, truth.sigma_b)
    worst = max(err["sigma_a"]["rel_sup"], err["sigma_b"]["rel_sup"])
    viol = r1.monotone_violations("down") + r2.monotone_violations("down") + rmin.monotone_violations("up")
    agree = float(np.max(np.abs(r1.u_avg.values - rmin.u_avg.values)))
    ctx.staging.scalar("verify_sigma_a_scatter.csv", rec.sigma_a_rec)
    ctx.staging.scalar("verify_sigma_b_scatter.csv", rec.sigma_b_rec)
    return _check(worst <= 0.05 and viol == 0 and agree <= 2 * rc.tol_fp,
                  rel_sup=worst, monotone_violations=viol, two_start_gap=agree)


def _integral_identity(ctx, n, nv):
    from .data_synthesis import synthesize
    from .isotropic_oracle import apply_JK
    grid, angles = SpatialGrid(1.0, 1.0, n, n), AngularGrid(nv)
    c = suite_phantom(ctx.streams.generator("verify/phantom/iso"))(grid, angles)
    step = 2e-3
    sol = solve_semilinear_detailed(c, GeneralSource.constant(1.0),
                                    SemilinearConfig(tol_fixed_point=1e-11,
                                                     inner=LinearSolveConfig(ray_step=step, tol_source=1e-13)))
    H = synthesize(c, sol.u_avg).H
    jk = apply_JK(sol.u_avg, H, c.sigma_s, 1.0, angles, step)
    err = float(np.max(np.abs(jk.values - sol.u_avg.values)))
    return _check(err <= 5e-4, sup_error=err)


def _csv_roundtrip(ctx, n):
    grid = SpatialGrid(1.0, 1.0, n, n)
    f = ScalarField(grid, ctx.streams.generator("verify/csv").uniform(0.0, 1.0, grid.shape))
    path = ctx.staging.path("verify_roundtrip.csv")
    write_scalar_csv(f, path)
    back = read_scalar_csv(path, grid)
    return _check(np.array_equal(back.values, f.values) and back.grid == grid)


def run_suite(ctx):
    """Run all checks; returns ``{name: {"passed": bool, ...}}``."""
    n = int(ctx.cfg.get("task", {}).get("verify_size", 16))
    nv = 8
    checks = {}
    for name, fn in (
        ("ballistic", lambda: _ballistic(n, nv)),
        ("bernoulli", lambda: _bernoulli(n, nv)),
        ("positivity_uniqueness", lambda: _positivity(ctx, n, nv)),
        ("recon_free", lambda: _recon_free(ctx, n, nv)),
        ("recon_scatter", lambda: _recon_scatter(ctx, n, nv)),
        ("integral_identity", lambda: _integral_identity(ctx, n, nv)),
        ("csv_roundtrip", lambda: _csv_roundtrip(ctx, n)),
    ):
        t0 = time.perf_counter()
        checks[name] = fn()
        ctx.report.timings[f"verify_{name}"] = time.perf_counter() - t0
    return checks
