"""Analytic potential-flow ground truth on procedurally generated O-grid meshes.

Two body families:

* cylinder of radius ``a`` centred at the origin, with free circulation;
* Joukowski-type airfoil: an offset circle mapped through ``z = zeta + c^2/zeta``.
  The circle is inflated by a margin ``tau`` beyond the critical point, so the
  trailing edge is slightly rounded and the map is regular on and outside the
  body. Circulation puts the rear stagnation point on the ray towards the
  critical point (Kutta-like condition).

Airfoil geometry is rescaled to unit chord with the leading edge at x = 0.
Pressure is Bernoulli with zero far-field static pressure.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .meshgraph import WALL, MeshGraph, TriMesh, mesh_to_graph

MAP_C = 1.0  # Joukowski map constant before rescaling


class FlowError(ValueError):
    pass


@dataclass
class FlowCase:
    body: str = "cylinder"            # "cylinder" | "joukowski"
    u_inf: float = 10.0
    alpha: float = 0.0                # rad
    rho: float = 1.225
    radius: float = 0.5               # cylinder radius (chord = 2 * radius)
    circulation: float = 0.0          # cylinder only; airfoils use the Kutta value
    mu_x: float = 0.1                 # airfoil circle offset (thickness)
    mu_y: float = 0.05                # airfoil circle offset (camber)
    tau: float = 0.08                 # relative margin of the circle beyond the critical point

    def __post_init__(self):
        if self.body not in ("cylinder", "joukowski"):
            raise FlowError(f"unknown body {self.body!r}")
        if not self.u_inf > 0:
            raise FlowError("u_inf must be positive")
        if self.body == "joukowski" and not self.tau > 0:
            raise FlowError("circle must enclose the critical point (tau > 0)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GridSpec:
    n_theta: int = 64
    n_r: int = 12
    outer_radius_chords: float = 1.0
    growth: float = 1.2

    def __post_init__(self):
        if self.n_theta < 8 or self.n_r < 2 or self.growth < 1:
            raise FlowError(f"invalid grid {self}")


# --------------------------------------------------------------------------
# flow oracles

def _bernoulli(w: np.ndarray, u_inf: float, rho: float):
    speed2 = w.real ** 2 + w.imag ** 2
    return w.real, -w.imag, 0.5 * rho * (u_inf ** 2 - speed2)


def _circle_velocity(zp, u_inf, alpha, a, gamma):
    """Conjugate velocity u - i v around a circle of radius a centred at 0."""
    return (u_inf * np.exp(-1j * alpha) * (1 - a ** 2 * np.exp(2j * alpha) / zp ** 2)
            - 1j * gamma / (2 * np.pi * zp))


def _as_complex(points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return p[:, 0] + 1j * p[:, 1]


def potential_flow_cylinder(case: FlowCase, points):
    """(u_x, u_y, p) at query points around the cylinder of ``case.radius``."""
    z = _as_complex(points)
    a = case.radius
    if np.any(np.abs(z) < a * (1 - 1e-12)):
        raise FlowError("query point inside the cylinder")
    w = _circle_velocity(z, case.u_inf, case.alpha, a, case.circulation)
    return _bernoulli(w, case.u_inf, case.rho)


@dataclass
class JoukowskiGeometry:
    center: complex
    radius: float
    theta_te: float
    scale: float      # raw chord
    shift: float      # raw leading-edge x

    @classmethod
    def from_case(cls, case: FlowCase) -> "JoukowskiGeometry":
        center = complex(-case.mu_x, case.mu_y)
        radius = abs(MAP_C - center) * (1 + case.tau)
        if abs(-MAP_C - center) >= radius:
            raise FlowError("circle must enclose both critical points")
        theta_te = float(np.angle(MAP_C - center))
        th = np.linspace(0, 2 * np.pi, 8192, endpoint=False)
        z = _jmap(center + radius * np.exp(1j * th))
        return cls(center, radius, theta_te, float(z.real.max() - z.real.min()), float(z.real.min()))

    def to_physical(self, zeta) -> np.ndarray:
        return (_jmap(zeta) - self.shift) / self.scale

    def to_circle_plane(self, z_phys) -> np.ndarray:
        z = np.asarray(z_phys) * self.scale + self.shift
        root = np.sqrt(z * z - 4 * MAP_C ** 2)
        z1, z2 = (z + root) / 2, (z - root) / 2
        pick = np.abs(z1 - self.center) >= np.abs(z2 - self.center)
        return np.where(pick, z1, z2)

    def kutta_circulation(self, u_inf: float, alpha: float) -> float:
        # rear stagnation point at theta_te on the circle
        return 4 * np.pi * self.radius * u_inf * math.sin(self.theta_te - alpha)

    @property
    def trailing_edge_cusp(self) -> complex:
        return (2 * MAP_C - self.shift) / self.scale


def _jmap(zeta):
    return zeta + MAP_C ** 2 / zeta


def joukowski_case(case: FlowCase, points):
    """(u_x, u_y, p) around the rescaled Joukowski body of ``case``."""
    geo = JoukowskiGeometry.from_case(case)
    z = _as_complex(points)
    if np.any(np.abs(z - geo.trailing_edge_cusp) < 1e-6):
        raise FlowError("query point at the map singularity")
    zeta = geo.to_circle_plane(z)
    zp = zeta - geo.center
    if np.any(np.abs(zp) < geo.radius * (1 - 1e-9)):
        raise FlowError("query point inside the airfoil")
    gamma = geo.kutta_circulation(case.u_inf, case.alpha)
    w_circle = _circle_velocity(zp, case.u_inf, case.alpha, geo.radius, gamma)
    # rescaling by the raw chord leaves velocities unchanged
    w = w_circle / (1 - MAP_C ** 2 / zeta ** 2)
    return _bernoulli(w, case.u_inf, case.rho)


def evaluate_flow(case: FlowCase, points):
    if case.body == "cylinder":
        return potential_flow_cylinder(case, points)
    return joukowski_case(case, points)


def chord_of(case: FlowCase) -> float:
    return 2 * case.radius if case.body == "cylinder" else 1.0


# --------------------------------------------------------------------------
# meshing

def _ring_offsets(grid: GridSpec, total: float) -> np.ndarray:
    k = np.arange(grid.n_r + 1)
    if grid.growth == 1:
        return total * k / grid.n_r
    g = grid.growth
    return total * (g ** k - 1) / (g ** grid.n_r - 1)


def ogrid_topology(n_theta: int, n_r: int) -> np.ndarray:
    """CCW triangles of a polar grid, vertex (j, k) stored at k * n_theta + j."""
    j = np.arange(n_theta)
    out = np.empty((n_r, n_theta, 2, 3), dtype=np.int64)
    for k in range(n_r):
        v00 = k * n_theta + j
        v10 = k * n_theta + (j + 1) % n_theta
        v01 = (k + 1) * n_theta + j
        v11 = (k + 1) * n_theta + (j + 1) % n_theta
        out[k, :, 0] = np.column_stack([v00, v01, v11])
        out[k, :, 1] = np.column_stack([v00, v11, v10])
    return out.reshape(-1, 3)


def ogrid_mesh(case: FlowCase, grid: GridSpec) -> TriMesh:
    """O-grid around the body; ring 0 is the surface."""
    theta = 2 * np.pi * np.arange(grid.n_theta) / grid.n_theta
    if case.body == "cylinder":
        chord = chord_of(case)
        radii = case.radius + _ring_offsets(grid, grid.outer_radius_chords * chord)
        z = (radii[:, None] * np.exp(1j * (theta[None, :] + np.pi))).ravel()
    else:
        geo = JoukowskiGeometry.from_case(case)
        chord = 1.0
        radii = geo.radius + _ring_offsets(grid, grid.outer_radius_chords * geo.scale)
        th = geo.theta_te + theta
        z = geo.to_physical(geo.center + radii[:, None] * np.exp(1j * th[None, :])).ravel()
    verts = np.column_stack([z.real, z.imag])
    mesh = TriMesh(verts, ogrid_topology(grid.n_theta, grid.n_r), np.arange(grid.n_theta), chord)
    mesh.validate()
    return mesh


def generate_case(case: FlowCase, grid: GridSpec, crop_radius_chords: float = 1.0) -> MeshGraph:
    """Graph with targets at every node and full surface sensing."""
    mesh = ogrid_mesh(case, grid)
    g = mesh_to_graph(mesh, crop_radius_chords)
    try:
        ux, uy, p = evaluate_flow(case, g.positions)
    except FlowError as exc:
        # straight cell edges cannot follow a sharply curved trailing edge on coarse rings
        raise FlowError(f"grid too coarse for this body (n_theta={grid.n_theta}): {exc}; "
                        f"airfoils need about n_theta >= 20") from exc
    wall = g.node_type == WALL
    return g.replace(
        target=np.column_stack([p, ux, uy]),
        pressure_obs=np.where(wall, p, np.nan),
        sense_mask=wall.copy(),
        rho=case.rho,
        meta={"case": case.to_dict(), "grid": asdict(grid)},
    )


# --------------------------------------------------------------------------
# partial coverage

def chordwise_distance(graph: MeshGraph) -> np.ndarray:
    """x distance from the leading edge (minimum-x wall node), geometry frame."""
    wall = graph.node_type == WALL
    x_le = graph.positions[wall, 0].min()
    return graph.positions[:, 0] - x_le


def mask_coverage(graph: MeshGraph, fraction: float) -> MeshGraph:
    """Keep only sensors within ``fraction * chord`` of the leading edge."""
    if not 0 < fraction <= 1:
        raise FlowError(f"coverage fraction must be in (0, 1], got {fraction}")
    wall = graph.node_type == WALL
    # small slack so f = 1 reaches the trailing-edge node despite rounding
    keep = wall & graph.sense_mask & (chordwise_distance(graph) <= fraction * graph.chord * (1 + 1e-9))
    if not keep.any():
        raise FlowError(f"coverage {fraction} leaves no sensed node")
    return graph.replace(sense_mask=keep, pressure_obs=np.where(keep, graph.pressure_obs, np.nan))


# --------------------------------------------------------------------------
# datasets

@dataclass
class DatasetSpec:
    n_cases: int = 8
    seed: int = 0
    splits: dict = field(default_factory=lambda: {"train": 1.0})
    grid: GridSpec = field(default_factory=GridSpec)
    cylinder_fraction: float = 0.3
    u_range: tuple = (1.0, 100.0)
    alpha_deg_train: tuple = (-20.0, 20.0)
    alpha_deg_eval: tuple = (-25.0, 25.0)
    crop_radius_chords: float = 1.0


def split_names(n_cases: int, splits: dict) -> list[str]:
    """Deterministic split assignment: contiguous blocks in declaration order."""
    names = list(splits)
    total = sum(splits.values())
    counts = [int(math.floor(n_cases * splits[k] / total)) for k in names]
    i = 0
    while sum(counts) < n_cases:
        counts[i % len(counts)] += 1
        i += 1
    out = []
    for k, c in zip(names, counts):
        out += [k] * c
    return out


def sample_cases(spec: DatasetSpec) -> list[tuple[str, FlowCase]]:
    sobol = qmc.Sobol(d=8, scramble=True, seed=spec.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # non power-of-two sample counts
        u = sobol.random(spec.n_cases)
    cases = []
    for i, split in enumerate(split_names(spec.n_cases, spec.splits)):
        s = u[i]
        lo, hi = spec.alpha_deg_train if split == "train" else spec.alpha_deg_eval
        alpha = math.radians(lo + (hi - lo) * s[1])
        u_inf = spec.u_range[0] + (spec.u_range[1] - spec.u_range[0]) * s[2]
        rho = 1.225 * (1 + 0.04 * (s[3] - 0.5))
        if s[0] < spec.cylinder_fraction:
            gamma = 4 * np.pi * 0.5 * u_inf * 0.4 * (2 * s[4] - 1)
            case = FlowCase("cylinder", u_inf, alpha, rho, radius=0.5, circulation=float(gamma))
        else:
            case = FlowCase("joukowski", u_inf, alpha, rho,
                            mu_x=0.05 + 0.10 * s[5], mu_y=-0.04 + 0.16 * s[6], tau=0.06 + 0.08 * s[7])
        cases.append((split, case))
    return cases


def generate_dataset(spec: DatasetSpec, out_dir: str | Path) -> Path:
    """Write one bundle per case plus ``splits.json``; deterministic in ``spec.seed``."""
    from .graphstore import save_bundle
    from .flownorm import compute_stats

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (split, case) in enumerate(sample_cases(spec)):
        g = generate_case(case, spec.grid, spec.crop_radius_chords)
        name = f"case_{i:05d}"
        save_bundle(g, compute_stats(g), {"case": case.to_dict(), "split": split, "index": i}, out / name)
        entries.append({"name": name, "split": split})
    manifest = {
        "seed": spec.seed,
        "n_cases": spec.n_cases,
        "grid": asdict(spec.grid),
        "cases": entries,
    }
    (out / "splits.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out


def load_split(data_dir: str | Path, split: str | None = None) -> list[Path]:
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "splits.json").read_text())
    return [data_dir / e["name"] for e in manifest["cases"] if split is None or e["split"] == split]
