"""Surface-only normalization and Bernoulli inflow estimate."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .meshgraph import MeshGraph


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class NormStats:
    mu_p: float
    sigma_p: float
    u_inf: float
    rho: float
    chord: float

    def __post_init__(self):
        if not (self.sigma_p > 0 and self.u_inf > 0 and self.rho > 0 and self.chord > 0):
            raise NormalizationError(f"invalid normalization constants {self}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(**{k: float(d[k]) for k in ("mu_p", "sigma_p", "u_inf", "rho", "chord")})


def estimate_inflow(surface_pressures, rho: float) -> float:
    """U_inf estimate sqrt(2 p0 / rho) with p0 the largest surface pressure.

    Assumes zero far-field static pressure, so p0 is the stagnation pressure.
    """
    p = np.asarray(surface_pressures, dtype=np.float64)
    if p.size == 0:
        raise NormalizationError("no sensed surface pressures")
    p0 = float(p.max())
    if not p0 > 0:
        raise NormalizationError("no stagnation-like pressure (max surface pressure <= 0)")
    return math.sqrt(2.0 * p0 / rho)


def stats_from_surface(sensed_pressures, chord: float, rho: float) -> NormStats:
    p = np.asarray(sensed_pressures, dtype=np.float64)
    if p.size == 0:
        raise NormalizationError("empty sense mask")
    mu = float(p.mean())
    sigma = float(p.std())
    sigma = max(sigma, 1e-6 * max(1.0, abs(mu)))
    return NormStats(mu, sigma, estimate_inflow(p, rho), float(rho), float(chord))


def compute_stats(graph: MeshGraph) -> NormStats:
    # only sensed surface values cross this boundary
    return stats_from_surface(graph.pressure_obs[graph.sense_mask], graph.chord, graph.rho)


def normalize(graph: MeshGraph, stats: NormStats) -> MeshGraph:
    """Dimensionless copy: pressure (p - mu)/sigma, velocity u/U_inf, lengths /chord.

    Unobserved pressures stay NaN.
    """
    tgt = graph.target.astype(np.float64)
    tgt_n = np.column_stack([(tgt[:, 0] - stats.mu_p) / stats.sigma_p, tgt[:, 1:] / stats.u_inf])
    obs = np.where(graph.sense_mask, (graph.pressure_obs - stats.mu_p) / stats.sigma_p, np.nan)
    return graph.replace(
        target=tgt_n, pressure_obs=obs,
        sdf=graph.sdf / stats.chord,
        edge_feat=graph.edge_feat / stats.chord,
        positions=graph.positions / stats.chord,
        chord=1.0,
        meta={**graph.meta, "normalized": True},
    )


def _out_dtype(a: np.ndarray, dtype):
    if dtype is not None:
        return np.dtype(dtype)
    return a.dtype if a.dtype.kind == "f" else np.dtype(np.float64)


def denormalize(pred, stats: NormStats, dtype=None) -> np.ndarray:
    """Map (n, 3) normalized predictions back to Pa and m/s, keeping the float dtype.

    Arithmetic runs in float64 and is rounded once to the output dtype.
    """
    pred = np.asarray(pred)
    out = pred.astype(np.float64)
    out[:, 0] = out[:, 0] * stats.sigma_p + stats.mu_p
    out[:, 1:] *= stats.u_inf
    return out.astype(_out_dtype(pred, dtype), copy=False)


def normalize_fields(fields, stats: NormStats, dtype=None) -> np.ndarray:
    fields = np.asarray(fields)
    out = fields.astype(np.float64)
    out[:, 0] = (out[:, 0] - stats.mu_p) / stats.sigma_p
    out[:, 1:] /= stats.u_inf
    return out.astype(_out_dtype(fields, dtype), copy=False)
