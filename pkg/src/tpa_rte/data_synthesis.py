"""Internal data ``H = sigma_a <u> + sigma_b <u>^2`` and its synthesis."""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import ParameterError
from .fields import ScalarField, read_scalar_csv, write_scalar_csv
from .forward_semilinear import (CollimatedSource, PointSource,
                                 solve_semilinear_collimated, solve_semilinear_detailed,
                                 solve_semilinear_point)
from .transport_linear import GeneralSource

__all__ = [
    "InternalDatum",
    "synthesize",
    "add_noise",
    "restrict",
    "forward_average",
    "synthesize_on_refined",
]


@dataclass(frozen=True, eq=False)
class InternalDatum:
    """Internal data field plus provenance.

    ``u_avg`` optionally carries the forward ``<u>`` used to build ``H``;
    it is kept in memory for diagnostics and never serialized.
    """

    H: ScalarField
    provenance: dict = field(default_factory=dict)
    u_avg: ScalarField = None

    @property
    def grid(self):
        return self.H.grid

    @property
    def values(self):
        return self.H.values

    def save(self, path):
        """Write ``path`` (CSV) and ``path`` with suffix ``.json``."""
        path = Path(path)
        write_scalar_csv(self.H, path)
        side = dict(self.provenance)
        side["grid"] = self.grid.to_dict()
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path, grid=None):
        path = Path(path)
        H = read_scalar_csv(path, grid)
        side = path.with_suffix(".json")
        prov = json.loads(side.read_text()) if side.exists() else {}
        return cls(H, prov)


def synthesize(coeffs, u_avg, provenance=None):
    """``H = sigma_a u + sigma_b u^2`` pointwise."""
    u = np.asarray(u_avg.values)
    if np.any(u < 0):
        raise ParameterError("angular average must be non-negative")
    H = coeffs.sigma_a.values * u + coeffs.sigma_b.values * u * u
    prov = {"noise_level": 0.0}
    prov.update(provenance or {})
    return InternalDatum(ScalarField(u_avg.grid, H), prov, u_avg)


def add_noise(datum, level, seed):
    """Multiplicative uniform noise ``H (1 + level xi)``, ``xi ~ U[-1, 1]``.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if not level >= 0:
        raise ParameterError("noise level must be non-negative")
    prov = dict(datum.provenance)
    prov["noise_level"] = float(level)
    if isinstance(seed, (int, np.integer)):
        prov["noise_seed"] = int(seed)
    if level == 0:
        return InternalDatum(datum.H, prov, datum.u_avg)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    xi = rng.uniform(-1.0, 1.0, size=datum.grid.shape)
    return InternalDatum(datum.H.with_values(datum.values * (1.0 + level * xi)), prov, datum.u_avg)


def restrict(values, factor):
    """Average ``factor x factor`` blocks of a fine cell-centered array."""
    v = np.asarray(values)
    ny, nx = v.shape
    if ny % factor or nx % factor:
        raise ParameterError("fine grid is not a refinement by the factor")
    return v.reshape(ny // factor, factor, nx // factor, factor).mean(axis=(1, 3))


def forward_average(coeffs, source, cfg, m0=None):
    """``<u>`` for any supported source type, plus the solver record."""
    if isinstance(source, CollimatedSource):
        sol = solve_semilinear_collimated(coeffs, source, cfg, m0=m0)
        return sol.average, sol
    if isinstance(source, PointSource):
        sol = solve_semilinear_point(coeffs, source, cfg, m0=m0)
        return sol.u_avg, sol
    if isinstance(source, GeneralSource):
        sol = solve_semilinear_detailed(coeffs, source, cfg, m0=m0)
        return sol.u_avg, sol
    raise ParameterError(f"unsupported source type {type(source).__name__}")


def _scaled(cfg, factor):
    return replace(cfg, inner=replace(cfg.inner, ray_step=cfg.inner.ray_step / factor))


def synthesize_on_refined(phantom, source, grid, angles, cfg, factor=2):
    """Solve on a grid refined by ``factor`` and restrict ``H`` by averaging.

    Parameters
    ----------
    phantom : callable
        ``phantom(grid, angles) -> CoefficientSet``.
    source : GeneralSource, CollimatedSource or PointSource
    grid, angles : target (reconstruction) discretization.
    cfg : SemilinearConfig
        Settings for the target grid; ``ray_step`` is divided by ``factor``.
    factor : int
        Refinement factor, at least 2.

    Returns
    -------
    InternalDatum
        ``u_avg`` holds the restricted forward average.
    """
    if int(factor) != factor or factor < 2:
        raise ParameterError("refinement factor must be an integer >= 2")
    factor = int(factor)
    fine = grid.refine(factor)
    coeffs = phantom(fine, angles)
    u_avg, _ = forward_average(coeffs, source, _scaled(cfg, factor))
    fine_datum = synthesize(coeffs, u_avg)
    H = ScalarField(grid, restrict(fine_datum.values, factor))
    u_c = ScalarField(grid, restrict(u_avg.values, factor))
    prov = {"source": getattr(source, "name", type(source).__name__), "refinement": factor,
            "noise_level": 0.0, "fine_grid": fine.to_dict()}
    return InternalDatum(H, prov, u_c)
