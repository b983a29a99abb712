"""Experiment driver.

Usage::

    tpa-rte <subcommand> --config run.json [--output DIR] [--threads N] [--verbose]

Subcommands: ``forward``, ``synth``, ``recon-free``, ``recon-scatter``,
``certify-isotropic`` and ``verify``.  Every run writes ``report.json`` to
the output directory, also on failure.  Field artifacts are staged and moved
into place only when the subcommand succeeds.

Exit codes: 0 success, 1 failed verification or unexpected error,
2 configuration error, 3 convergence failure, 4 inconsistent data.
"""
import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import time
import traceback
import zlib
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from filelock import FileLock, Timeout

from . import __version__
from .data_synthesis import (InternalDatum, add_noise, forward_average, synthesize,
                             synthesize_on_refined)
from .exceptions import ConvergenceError, DataInconsistencyError
from .fields import (CoefficientSet, ScalarField, build_kernel, read_scalar_csv,
                     write_phase_csv, write_scalar_csv)
from .forward_semilinear import CollimatedSource, PointSource, SemilinearConfig
from .geometry import AngularGrid, SpatialGrid
from .phantoms import make_phantom
from .transport_linear import GeneralSource, LinearSolveConfig

__all__ = ["main", "run", "load_config", "RunReport", "Streams", "ConfigError",
           "EXIT_OK", "EXIT_FAILED", "EXIT_CONFIG", "EXIT_CONVERGENCE", "EXIT_DATA"]

log = logging.getLogger("tpa_rte")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_DATA = 0, 1, 2, 3, 4
THREADS_ENV = "TPA_RTE_THREADS"
SUBCOMMANDS = ("forward", "synth", "recon-free", "recon-scatter", "certify-isotropic", "verify")

# solver defaults; physics parameters have none
DEFAULT_SOLVER = {
    "ray_step": None,  # half the smaller cell size
    "tol_source": 1e-10,
    "max_source_iters": 1000,
    "tol_fixed_point": 1e-8,
    "max_outer_iters": 200,
    "tol_fp": 1e-8,
    "max_iters": 200,
    "refinement": 2,
    "warn_only": False,
}


class ConfigError(ValueError):
    """The configuration is malformed or incomplete."""


class VerificationFailed(RuntimeError):
    """At least one check of the verification suite failed."""


# ------------------------------------------------------------------ config

def _reject_constant(name):
    raise ConfigError(f"non-finite number {name} in configuration")


def load_schema():
    return json.loads(resources.files("tpa_rte").joinpath("config_schema.json").read_text())


def load_config(path):
    """Parse and validate a JSON configuration.

    Relative file paths inside the configuration are resolved against the
    directory of the configuration file.
    """
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(), parse_constant=_reject_constant)
    except FileNotFoundError as exc:
        raise ConfigError(f"configuration file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from exc
    base = path.parent
    coeffs = cfg.get("coefficients", {})
    for key, p in coeffs.get("csv", {}).items():
        coeffs["csv"][key] = _existing(base, p)
    task = cfg.get("task", {})
    if "data" in task:
        task["data"] = [_existing(base, p) for p in task["data"]]
    b = cfg.get("bounds")
    if b is not None:
        if b.get("sigma_a_min", 0.0) > b["sigma_a_max"] or b.get("sigma_b_min", 0.0) > b["sigma_b_max"]:
            raise ConfigError("bounds must satisfy lower <= upper")
    return cfg


def _existing(base, p):
    q = Path(p)
    q = q if q.is_absolute() else base / q
    if not q.exists():
        raise ConfigError(f"referenced file does not exist: {q}")
    return str(q)


def _require(cfg, *keys):
    for k in keys:
        if k not in cfg:
            raise ConfigError(f"this subcommand requires the '{k}' block")


def solver_settings(cfg):
    s = dict(DEFAULT_SOLVER)
    s.update(cfg.get("solver", {}))
    return s


def make_grids(cfg):
    g = cfg["grid"]
    return SpatialGrid(g["Lx"], g["Ly"], g["nx"], g["ny"]), AngularGrid(g["n_v"])


def linear_config(cfg, grid):
    s = solver_settings(cfg)
    step = s["ray_step"] or 0.5 * min(grid.hx, grid.hy)
    return LinearSolveConfig(ray_step=step, tol_source=s["tol_source"],
                             max_source_iters=s["max_source_iters"])


def semilinear_config(cfg, grid):
    s = solver_settings(cfg)
    return SemilinearConfig(tol_fixed_point=s["tol_fixed_point"], max_outer_iters=s["max_outer_iters"],
                            inner=linear_config(cfg, grid), warn_only=s["warn_only"])


class CsvMedium:
    """Coefficient fields read from CSV; only usable on their own grid."""

    def __init__(self, paths, kernel):
        self.fields = {k: read_scalar_csv(p) for k, p in paths.items()}
        self.kernel = kernel
        grids = {f.grid for f in self.fields.values()}
        if len(grids) != 1:
            raise ConfigError("coefficient CSV files are on different grids")

    def __call__(self, grid, angles):
        f = {k: read_scalar_csv_on(v, grid) for k, v in self.fields.items()}
        kern = build_kernel(angles, self.kernel.get("profile", "isotropic"), float(self.kernel.get("g", 0.0)))
        return CoefficientSet(f["sigma_a"], f["sigma_b"], f["sigma_s"], kern)


def read_scalar_csv_on(f, grid):
    if f.grid != grid:
        raise ConfigError("coefficient CSV grid does not match the configured grid")
    return f


def make_medium(cfg, streams):
    """Phantom recipe or CSV medium from the coefficients block."""
    c = cfg["coefficients"]
    if "phantom" in c:
        params = dict(c["params"])
        if "kernel" in c:
            params["kernel"] = c["kernel"]
        g = cfg["grid"]
        return make_phantom(c["phantom"], params, rng=streams.generator("phantom"), Lx=g["Lx"], Ly=g["Ly"])
    return CsvMedium(c["csv"], c.get("kernel", {"profile": "isotropic"}))


def make_source(spec, index):
    name = spec.get("name", f"source{index}")
    if spec["type"] == "general":
        return GeneralSource.constant(spec["value"], name)
    if spec["type"] == "collimated":
        return CollimatedSource(spec["strength"], spec["theta"], name=name)
    n = np.asarray(spec["normal"], dtype=float)
    return PointSource(tuple(spec["point"]), tuple(n / np.hypot(*n)), spec["strength"], name=name)


def make_sources(cfg, count=None, kind=None):
    _require(cfg, "sources")
    specs = cfg["sources"]
    if count is not None and len(specs) != count:
        raise ConfigError(f"this subcommand needs exactly {count} sources, got {len(specs)}")
    if kind is not None and any(s["type"] not in kind for s in specs):
        raise ConfigError(f"source type must be one of {kind}")
    return [make_source(s, j + 1) for j, s in enumerate(specs)]


def recon_config(cfg, grid):
    from .recon_scatter import ScatterReconConfig
    _require(cfg, "bounds")
    b = cfg["bounds"]
    s = solver_settings(cfg)
    inner = linear_config(cfg, grid)
    return ScatterReconConfig(
        sigma_a_max=b["sigma_a_max"], sigma_b_max=b["sigma_b_max"], g_max=b["g_max"],
        sigma_a_min=b.get("sigma_a_min", 0.0), sigma_b_min=b.get("sigma_b_min", 0.0),
        tol_fp=s["tol_fp"], max_iters=s["max_iters"], inner=inner)


# ----------------------------------------------------------------- plumbing

class Streams:
    """Named random streams derived from one seed.

    ``Streams(seed).generator("noise/1")`` always yields the same stream for
    the same seed and name, independent of how many other streams were used.
    """

    def __init__(self, seed):
        self.seed = int(seed)

    def seed_sequence(self, name):
        return np.random.SeedSequence(self.seed, spawn_key=(zlib.crc32(name.encode()),))

    def generator(self, name):
        return np.random.default_rng(self.seed_sequence(name))


@dataclass
class RunReport:
    """Machine-readable record of one invocation."""

    subcommand: str
    version: str = __version__
    status: str = "running"
    exit_code: int = None
    config: dict = None
    error: str = None
    timings: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    certificates: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def atomic_write_text(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.chmod(tmp, 0o644)
    os.replace(tmp, path)


class Staging:
    """Artifacts written to a hidden directory and published together."""

    def __init__(self, outdir):
        self.outdir = Path(outdir)
        self.dir = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.outdir))
        self.names = []

    def path(self, name):
        self.names.append(name)
        return self.dir / name

    def scalar(self, name, f):
        write_scalar_csv(f, self.path(name))

    def phase(self, name, u):
        write_phase_csv(u, self.path(name))

    def json(self, name, obj):
        self.path(name).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True))

    def table(self, name, header, rows):
        arr = np.asarray(rows, dtype=float).reshape(-1, len(header))
        np.savetxt(self.path(name), arr, fmt="%.17e", delimiter=",", header=",".join(header), comments="")

    def datum(self, name, d):
        d.save(self.path(name))
        self.names.append(Path(name).with_suffix(".json").name)

    def commit(self):
        for n in self.names:
            os.replace(self.dir / n, self.outdir / n)
        shutil.rmtree(self.dir, ignore_errors=True)
        return list(self.names)

    def discard(self):
        shutil.rmtree(self.dir, ignore_errors=True)


@dataclass
class Context:
    cfg: dict
    report: RunReport
    staging: Staging
    streams: Streams


def set_threads(n):
    """Set the numba thread count, clamped to what the runtime allows."""
    import numba
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


# -------------------------------------------------------------- subcommands

def _truth_errors(rec, truth):
    from .recon_free import relative_errors
    return relative_errors(rec, truth.sigma_a, truth.sigma_b)


def _acquire_data(ctx, medium, sources, grid, angles):
    """Load data from ``task.data`` or synthesize them, then add noise."""
    task = ctx.cfg.get("task", {})
    if "data" in task:
        if len(task["data"]) != len(sources):
            raise ConfigError("task.data must list one file per source")
        data = [InternalDatum.load(p, grid) for p in task["data"]]
    else:
        s = solver_settings(ctx.cfg)
        fcfg = semilinear_config(ctx.cfg, grid)
        factor = s["refinement"]
        t0 = time.perf_counter()
        if factor >= 2 and not isinstance(medium, CsvMedium):
            data = [synthesize_on_refined(medium, src, grid, angles, fcfg, factor) for src in sources]
        else:
            coeffs = medium(grid, angles)
            data = []
            for src in sources:
                avg, _ = forward_average(coeffs, src, fcfg)
                data.append(synthesize(coeffs, avg, {"source": src.name, "refinement": 1}))
        ctx.report.timings["synthesis"] = time.perf_counter() - t0
    level = task.get("noise_level", 0.0)
    if level > 0:
        data = [add_noise(d, level, ctx.streams.generator(f"noise/{j + 1}")) for j, d in enumerate(data)]
    return data


def cmd_forward(ctx):
    cfg = ctx.cfg
    _require(cfg, "grid", "coefficients", "sources")
    grid, angles = make_grids(cfg)
    coeffs = make_medium(cfg, ctx.streams)(grid, angles)
    fcfg = semilinear_config(cfg, grid)
    for j, src in enumerate(make_sources(cfg), start=1):
        t0 = time.perf_counter()
        avg, sol = forward_average(coeffs, src, fcfg)
        ctx.report.timings[f"forward_{j}"] = time.perf_counter() - t0
        ctx.report.histories[f"gaps_{j}"] = list(getattr(sol, "gaps", []))
        rep = getattr(sol, "report", None)
        if rep is not None:
            ctx.report.certificates[f"admissibility_{j}"] = rep.to_dict()
        ctx.report.metrics[f"u_avg_{j}"] = {"min": avg.min(), "max": avg.max()}
        ctx.staging.scalar(f"u_avg_{j}.csv", avg)
        u = getattr(sol, "u", None)
        if cfg.get("task", {}).get("write_phase") and u is not None:
            ctx.staging.phase(f"u_{j}.csv", u)


def cmd_synth(ctx):
    cfg = ctx.cfg
    _require(cfg, "grid", "coefficients", "sources")
    grid, angles = make_grids(cfg)
    medium = make_medium(cfg, ctx.streams)
    sources = make_sources(cfg)
    data = _acquire_data(ctx, medium, sources, grid, angles)
    for j, d in enumerate(data, start=1):
        ctx.staging.datum(f"H_{j}.csv", d)
        ctx.report.metrics[f"H_{j}"] = {"min": d.H.min(), "max": d.H.max(),
                                        "noise_level": d.provenance.get("noise_level", 0.0)}


def cmd_recon_free(ctx):
    from .recon_free import (recover_density_collimated, recover_density_point,
                             separation_fraction, solve_pointwise_pair)
    cfg = ctx.cfg
    _require(cfg, "grid", "coefficients", "sources")
    grid, angles = make_grids(cfg)
    medium = make_medium(cfg, ctx.streams)
    sources = make_sources(cfg, 2, ("collimated", "point"))
    if sources[0].__class__ is not sources[1].__class__:
        raise ConfigError("both sources must have the same type")
    data = _acquire_data(ctx, medium, sources, grid, angles)
    task = cfg.get("task", {})
    t0 = time.perf_counter()
    if isinstance(sources[0], PointSource):
        if "epsilon" not in task:
            raise ConfigError("point sources need task.epsilon")
        phis = [recover_density_point(d, s, task["epsilon"]) for d, s in zip(data, sources)]
        gap = abs(sources[0].evaluate(0.0, 1.0) - sources[1].evaluate(0.0, 1.0))
    else:
        phis = [recover_density_collimated(d, s) for d, s in zip(data, sources)]
        gap = abs(sources[0].bounds()[1] - sources[1].bounds()[1])
    if gap == 0:
        raise ConfigError("the two sources must have different strengths")
    rec = solve_pointwise_pair(phis[0], phis[1], data[0], data[1], det_floor=task.get("det_floor"),
                               source_gap=float(gap))
    ctx.report.timings["reconstruction"] = time.perf_counter() - t0
    ctx.report.metrics["separation_fraction"] = separation_fraction(phis[0], phis[1])
    ctx.report.metrics["masked_fraction"] = rec.masked_fraction
    if not isinstance(medium, CsvMedium) or "data" not in task:
        ctx.report.metrics["errors"] = _truth_errors(rec, medium(grid, angles))
    for j, p in enumerate(phis, start=1):
        ctx.staging.scalar(f"phi_{j}.csv", p.phi)
    _write_pair(ctx, rec)


def _write_pair(ctx, rec):
    ctx.staging.scalar("sigma_a_rec.csv", rec.sigma_a_rec)
    ctx.staging.scalar("sigma_b_rec.csv", rec.sigma_b_rec)
    ctx.staging.scalar("mask.csv", ScalarField(rec.sigma_a_rec.grid, rec.mask.astype(float)))
    ctx.staging.scalar("conditioning.csv", rec.conditioning)


def cmd_recon_scatter(ctx):
    from .recon_scatter import check_pi_alpha, fixed_point_recover_u, recover_pair_scatter, stability_probe
    cfg = ctx.cfg
    _require(cfg, "grid", "coefficients", "sources", "bounds")
    grid, angles = make_grids(cfg)
    medium = make_medium(cfg, ctx.streams)
    sources = make_sources(cfg, 2, ("general",))
    rcfg = recon_config(cfg, grid)
    task = cfg.get("task", {})
    data = _acquire_data(ctx, medium, sources, grid, angles)
    truth = medium(grid, angles)
    t0 = time.perf_counter()
    start = task.get("start", "max")
    results = tuple(fixed_point_recover_u(d, s, truth.sigma_s, truth.kernel, rcfg, start=start)
                    for d, s in zip(data, sources))
    rec, _ = recover_pair_scatter(data[0], data[1], sources[0], sources[1], truth.sigma_s, truth.kernel,
                                  rcfg, det_floor=task.get("det_floor"), results=results)
    ctx.report.timings["reconstruction"] = time.perf_counter() - t0
    direction = "down" if start == "max" else "up"
    for j, r in enumerate(results, start=1):
        ctx.report.histories[f"gaps_{j}"] = r.gaps
        ctx.report.histories[f"clamp_counts_{j}"] = r.clamp_counts
        ctx.report.metrics[f"fixed_point_{j}"] = {
            "iterations": r.iterations, "monotone_violations": r.monotone_violations(direction),
            "clipped_cells": int(r.clipped.sum()), "a2_holds": r.bracket.a2_holds}
        ctx.staging.scalar(f"u_avg_{j}.csv", r.u_avg)
    ctx.report.metrics["masked_fraction"] = rec.masked_fraction
    ctx.report.metrics["errors"] = _truth_errors(rec, truth)
    pi = {f"datum_{j}": check_pi_alpha(r.Sigma_a, d, s, angles, rcfg.sigma_a_max).to_dict()
          for j, (r, d, s) in enumerate(zip(results, data, sources), start=1)}
    ctx.report.certificates["pi_alpha"] = pi
    ctx.staging.json("pi_alpha.json", pi)
    n = max(r.iterations for r in results)
    rows = [[k + 1] + [r.gaps[k] if k < r.iterations else np.nan for r in results] for k in range(n)]
    ctx.staging.table("gap_history.csv", ["iteration", "gap_1", "gap_2"], rows)
    _write_pair(ctx, rec)
    if "stability" in task:
        if isinstance(medium, CsvMedium):
            raise ConfigError("the stability probe needs a phantom (refined synthesis)")
        st = task["stability"]
        t1 = time.perf_counter()
        table = stability_probe(medium, tuple(sources), grid, angles, semilinear_config(cfg, grid), rcfg,
                                noise_levels=st["levels"], seeds=st["seeds"],
                                factor=max(2, solver_settings(cfg)["refinement"]))
        ctx.report.timings["stability"] = time.perf_counter() - t1
        hdr = ["level", "seed", "data_err", "coef_err", "above_floor", "ok"]
        ctx.staging.table("stability.csv", hdr, [[r["level"], r["seed"], r["data_err"], r["coef_err"],
                                                  r["above_floor"], float(r["status"] == "ok")]
                                                 for r in table.rows])
        ctx.report.metrics["stability_ratios"] = table.ratios()
        ctx.report.metrics["stability_baseline"] = table.baseline


def cmd_certify_isotropic(ctx):
    from .isotropic_oracle import uniqueness_certificate
    from .recon_scatter import compute_eta
    cfg = ctx.cfg
    _require(cfg, "grid", "coefficients", "sources", "bounds")
    grid, angles = make_grids(cfg)
    medium = make_medium(cfg, ctx.streams)
    sources = make_sources(cfg, 1, ("general",))
    truth = medium(grid, angles)
    if not truth.kernel.is_isotropic:
        raise ConfigError("certify-isotropic requires an isotropic kernel")
    data = _acquire_data(ctx, medium, sources, grid, angles)
    rcfg = recon_config(cfg, grid)
    g_bar = sources[0].bounds()[1]
    t0 = time.perf_counter()
    consts = uniqueness_certificate(data[0].H, truth.sigma_s, g_bar, compute_eta(data[0], rcfg), angles,
                                    tol=rcfg.tol_fp, inner=rcfg.inner,
                                    step=cfg.get("task", {}).get("quadrature_step", rcfg.inner.ray_step))
    ctx.report.timings["certificate"] = time.perf_counter() - t0
    ctx.report.certificates["isotropic"] = consts.to_dict()
    ctx.staging.json("isotropic_constants.json", consts.to_dict())


def cmd_verify(ctx):
    from .verify_suite import run_suite
    checks = run_suite(ctx)
    ctx.report.metrics["checks"] = checks
    failed = [k for k, v in checks.items() if not v["passed"]]
    if failed:
        raise VerificationFailed(f"failed checks: {', '.join(failed)}")


COMMANDS = {
    "forward": cmd_forward,
    "synth": cmd_synth,
    "recon-free": cmd_recon_free,
    "recon-scatter": cmd_recon_scatter,
    "certify-isotropic": cmd_certify_isotropic,
    "verify": cmd_verify,
}


# --------------------------------------------------------------------- main

def _exit_code(exc):
    from .exceptions import DomainError, ParameterError, SubcriticalityError, ValidationError
    if isinstance(exc, DataInconsistencyError):
        return EXIT_DATA
    if isinstance(exc, ConvergenceError):
        return EXIT_CONVERGENCE
    if isinstance(exc, (ConfigError, ParameterError, ValidationError, DomainError, SubcriticalityError)):
        return EXIT_CONFIG
    return EXIT_FAILED


def build_parser():
    p = argparse.ArgumentParser(prog="tpa-rte", description="Two-photon absorption transport experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--output", help="output directory (overrides the config)")
        sp.add_argument("--threads", type=int, help=f"worker threads (overrides ${THREADS_ENV})")
        sp.add_argument("--verbose", "-v", action="store_true")
    return p


def run(subcommand, config_path, output=None, threads=None):
    """Execute one subcommand; returns ``(exit_code, report)``."""
    report = RunReport(subcommand)
    outdir = Path(output) if output else None
    t_start = time.perf_counter()
    try:
        cfg = load_config(config_path)
        report.config = cfg
        if outdir is None:
            if "output" not in cfg:
                raise ConfigError("no output directory: pass --output or set 'output'")
            outdir = Path(cfg["output"])
    except Exception as exc:  # noqa: BLE001 - reported and mapped to an exit code
        if outdir is not None:
            outdir.mkdir(parents=True, exist_ok=True)
        return _finish(report, outdir, exc, t_start)
    outdir.mkdir(parents=True, exist_ok=True)
    n = threads if threads is not None else os.environ.get(THREADS_ENV)
    if n is not None:
        try:
            report.metrics["threads"] = set_threads(int(n))
        except ValueError as exc:
            return _finish(report, outdir, ConfigError(f"invalid thread count {n!r}: {exc}"), t_start)
    lock = FileLock(str(outdir / ".lock"), timeout=0)
    try:
        lock.acquire()
    except Timeout:
        return _finish(report, None, ConfigError(f"output directory {outdir} is in use"), t_start)
    try:
        staging = Staging(outdir)
        ctx = Context(cfg, report, staging, Streams(cfg["seed"]))
        try:
            COMMANDS[subcommand](ctx)
        except BaseException as exc:
            staging.discard()
            if not isinstance(exc, Exception):
                raise
            return _finish(report, outdir, exc, t_start)
        report.artifacts = staging.commit()
        return _finish(report, outdir, None, t_start)
    finally:
        lock.release()


def _finish(report, outdir, exc, t_start):
    report.timings["total"] = time.perf_counter() - t_start
    if exc is None:
        report.status, report.exit_code = "ok", EXIT_OK
    else:
        report.exit_code = _exit_code(exc)
        report.status = "failed"
        report.error = f"{type(exc).__name__}: {exc}"
        if report.exit_code == EXIT_FAILED and not isinstance(exc, VerificationFailed):
            log.error("unexpected error\n%s", "".join(traceback.format_exception(exc)))
        else:
            log.error("%s", report.error)
    text = report.to_json()
    if outdir is not None and outdir.is_dir():
        atomic_write_text(outdir / "report.json", text)
    else:
        sys.stderr.write(text + "\n")
    return report.exit_code, report


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    code, report = run(args.subcommand, args.config, args.output, args.threads)
    print(f"{args.subcommand}: {report.status}" + (f" ({report.error})" if report.error else ""))
    return code


if __name__ == "__main__":
    sys.exit(main())
