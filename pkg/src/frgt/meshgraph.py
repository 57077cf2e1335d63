"""Triangular mesh -> finite-volume dual graph with wall nodes and geometric features."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

FLUID, WALL = 0, 1
DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    pass


class GraphInvariantError(ValueError):
    pass


@dataclass
class TriMesh:
    vertices: np.ndarray          # (nv, 2) metres
    triangles: np.ndarray         # (nt, 3) CCW vertex indices
    surface_polyline: np.ndarray  # (ns,) closed loop of vertex indices
    chord: float

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        loop = np.asarray(self.surface_polyline, dtype=np.int64).ravel()
        if loop.size > 1 and loop[0] == loop[-1]:
            loop = loop[:-1]
        self.surface_polyline = loop
        self.chord = float(self.chord)

    def validate(self) -> None:
        nv = len(self.vertices)
        if self.chord <= 0:
            raise MeshError(f"chord must be positive, got {self.chord}")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= nv):
            raise MeshError("triangle index out of range")
        area = triangle_areas(self.vertices, self.triangles)
        bad = np.flatnonzero(area < DEGENERATE_AREA)
        if bad.size:
            raise MeshError(f"triangle {bad[0]} is degenerate or clockwise (area {area[bad[0]]:.3e})")
        loop = self.surface_polyline
        if loop.size and (loop.min() < 0 or loop.max() >= nv):
            raise MeshError("surface index out of range")
        if len(np.unique(loop)) != len(loop):
            raise MeshError("surface polyline is not a simple loop")


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


@dataclass
class MeshGraph:
    positions: np.ndarray                 # (n, 2)
    node_type: np.ndarray                 # (n,) uint8, FLUID / WALL
    edges: np.ndarray                     # (m, 2) int64, (src, dst)
    edge_feat: np.ndarray                 # (m, 4): r_x, r_y, l, l_b
    sdf: np.ndarray                       # (n,)
    pressure_obs: np.ndarray              # (n,) NaN where unobserved
    target: np.ndarray                    # (n, 3): p, u_x, u_y
    sense_mask: np.ndarray                # (n,) bool
    chord: float = 1.0
    rho: float = 1.225
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def replace(self, **changes) -> "MeshGraph":
        return dataclasses.replace(self, **changes)

    def permute(self, perm: np.ndarray) -> "MeshGraph":
        """Relabel nodes so new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return self.replace(
            positions=self.positions[perm], node_type=self.node_type[perm],
            edges=inv[self.edges], sdf=self.sdf[perm], pressure_obs=self.pressure_obs[perm],
            target=self.target[perm], sense_mask=self.sense_mask[perm])

    def validate(self, rtol: float = 0.0) -> None:
        """Raise :class:`GraphInvariantError` on the first violated invariant.

        ``rtol`` loosens the relative-vector check for graphs stored in float32.
        """
        n, m = self.n_nodes, self.n_edges
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= n):
            raise GraphInvariantError("edge index out of range")
        src, dst = self.edges[:, 0], self.edges[:, 1]
        key = src * n + dst
        rkey = dst * n + src
        order = np.argsort(key)
        pos = np.searchsorted(key[order], rkey)
        pos = np.minimum(pos, max(m - 1, 0))
        rev = order[pos] if m else pos
        missing = np.flatnonzero(key[rev] != rkey) if m else []
        if len(missing):
            e = missing[0]
            raise GraphInvariantError(f"edge ({src[e]},{dst[e]}) has no reverse edge")
        r = self.edge_feat[:, :2]
        if np.any(r != -r[rev]):
            e = np.flatnonzero(np.any(r != -r[rev], axis=1))[0]
            raise GraphInvariantError(f"edge ({src[e]},{dst[e]}) relative vector not antisymmetric")
        if np.any(self.edge_feat[:, 2:] != self.edge_feat[rev, 2:]):
            e = np.flatnonzero(np.any(self.edge_feat[:, 2:] != self.edge_feat[rev, 2:], axis=1))[0]
            raise GraphInvariantError(f"edge ({src[e]},{dst[e]}) lengths not symmetric")
        diff = self.positions[dst] - self.positions[src]
        scale = np.maximum(np.abs(diff), np.abs(r)).max(initial=0.0)
        if np.any(np.abs(r - diff) > rtol * max(scale, 1e-30)):
            raise GraphInvariantError("relative edge vector differs from position difference")
        if np.any(self.sense_mask & (self.node_type != WALL)):
            raise GraphInvariantError("sensed node that is not a wall node")
        if np.any(self.sense_mask & ~np.isfinite(self.pressure_obs)):
            raise GraphInvariantError("sensed node without a finite pressure")
        if np.any(self.sdf < 0):
            raise GraphInvariantError("negative sdf")
        if np.any(self.sdf[self.node_type == WALL] != 0):
            raise GraphInvariantError("wall node with nonzero sdf")


def _edge_features(positions: np.ndarray, edges: np.ndarray, lb: np.ndarray) -> np.ndarray:
    r = positions[edges[:, 1]] - positions[edges[:, 0]]
    length = np.hypot(r[:, 0], r[:, 1])
    return np.column_stack([r, length, lb])


def _sorted_edge_keys(triangles: np.ndarray, nv: int):
    """Every triangle side as (unordered vertex key, triangle id)."""
    sides = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    owner = np.tile(np.arange(len(triangles)), 3)
    lo, hi = sides.min(axis=1), sides.max(axis=1)
    return lo * nv + hi, owner, lo, hi


def build_dual_graph(mesh: TriMesh) -> MeshGraph:
    """One fluid node per triangle, a directed edge pair per shared triangle side."""
    mesh.validate()
    V, T = mesh.vertices, mesh.triangles
    nv, nt = len(V), len(T)
    key, owner, lo, hi = _sorted_edge_keys(T, nv)
    order = np.argsort(key, kind="stable")
    skey = key[order]
    uniq, start, counts = np.unique(skey, return_index=True, return_counts=True)
    if np.any(counts > 2):
        k = uniq[np.argmax(counts > 2)]
        raise MeshError(f"non-manifold mesh edge ({k // nv}, {k % nv}) shared by {counts.max()} triangles")
    shared = start[counts == 2]
    t0, t1 = owner[order[shared]], owner[order[shared + 1]]
    va, vb = lo[order[shared]], hi[order[shared]]
    lb = np.hypot(*(V[va] - V[vb]).T)

    centroids = V[T].mean(axis=1)
    edges = np.concatenate([np.column_stack([t0, t1]), np.column_stack([t1, t0])])
    lb2 = np.concatenate([lb, lb])
    n = nt
    return MeshGraph(
        positions=centroids,
        node_type=np.full(n, FLUID, dtype=np.uint8),
        edges=edges.astype(np.int64).reshape(-1, 2),
        edge_feat=_edge_features(centroids, edges.reshape(-1, 2), lb2),
        sdf=np.zeros(n),
        pressure_obs=np.full(n, np.nan),
        target=np.zeros((n, 3)),
        sense_mask=np.zeros(n, dtype=bool),
        chord=mesh.chord,
    )


def attach_surface_chain(graph: MeshGraph, mesh: TriMesh) -> MeshGraph:
    """Append one wall node per surface vertex, chain edges along the loop and
    wall-fluid edges to the triangles that own each surface segment."""
    loop = mesh.surface_polyline
    if loop.size == 0:
        raise MeshError("empty surface polyline")
    nv = len(mesh.vertices)
    T = mesh.triangles
    touched = np.zeros(nv, dtype=bool)
    touched[T.ravel()] = True
    if not touched[loop].all():
        v = loop[~touched[loop]][0]
        raise MeshError(f"surface vertex {v} has no incident triangle")

    n0 = graph.n_nodes
    ns = len(loop)
    wall_ids = n0 + np.arange(ns)

    pairs: set[tuple[int, int]] = set()
    if ns > 1:
        for k in range(ns):
            a, b = wall_ids[k], wall_ids[(k + 1) % ns]
            if a != b:
                pairs.add((min(a, b), max(a, b)))

    key, owner, _, _ = _sorted_edge_keys(T, nv)
    by_key: dict[int, list[int]] = {}
    for kk, t in zip(key.tolist(), owner.tolist()):
        by_key.setdefault(kk, []).append(t)
    for k in range(ns):
        va, vb = loop[k], loop[(k + 1) % ns]
        if va == vb:
            continue
        tris = by_key.get(min(va, vb) * nv + max(va, vb), [])
        for t in tris:
            for w in (wall_ids[k], wall_ids[(k + 1) % ns]):
                pairs.add((int(t), int(w)))

    new = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    new_edges = np.concatenate([new, new[:, ::-1]])
    positions = np.concatenate([graph.positions, mesh.vertices[loop]])
    feat_new = _edge_features(positions, new_edges, np.zeros(len(new_edges)))

    return graph.replace(
        positions=positions,
        node_type=np.concatenate([graph.node_type, np.full(ns, WALL, dtype=np.uint8)]),
        edges=np.concatenate([graph.edges, new_edges]),
        edge_feat=np.concatenate([graph.edge_feat, feat_new]),
        sdf=np.concatenate([graph.sdf, np.zeros(ns)]),
        pressure_obs=np.concatenate([graph.pressure_obs, np.full(ns, np.nan)]),
        target=np.concatenate([graph.target, np.zeros((ns, 3))]),
        sense_mask=np.concatenate([graph.sense_mask, np.zeros(ns, dtype=bool)]),
    )


def nearest_distance(points: np.ndarray, surface: np.ndarray) -> np.ndarray:
    """Distance from each point to the closest surface sample (k-d tree query)."""
    tree = cKDTree(np.asarray(surface, dtype=np.float64))
    dist, _ = tree.query(np.asarray(points, dtype=np.float64), k=1)
    return dist


def compute_sdf(graph: MeshGraph, mesh: TriMesh) -> MeshGraph:
    """Unsigned distance to the discrete surface point set; exactly 0 on wall nodes."""
    wall = graph.node_type == WALL
    if not wall.any():
        raise MeshError("compute_sdf needs wall nodes")
    sdf = nearest_distance(graph.positions, mesh.vertices[mesh.surface_polyline])
    sdf[wall] = 0.0
    return graph.replace(sdf=sdf)


def subgraph(graph: MeshGraph, keep: np.ndarray) -> MeshGraph:
    """Induced subgraph on boolean node mask ``keep`` with contiguous reindexing."""
    keep = np.asarray(keep, dtype=bool)
    new_id = np.full(graph.n_nodes, -1, dtype=np.int64)
    new_id[keep] = np.arange(int(keep.sum()))
    ekeep = keep[graph.edges[:, 0]] & keep[graph.edges[:, 1]]
    return graph.replace(
        positions=graph.positions[keep], node_type=graph.node_type[keep],
        edges=new_id[graph.edges[ekeep]], edge_feat=graph.edge_feat[ekeep],
        sdf=graph.sdf[keep], pressure_obs=graph.pressure_obs[keep],
        target=graph.target[keep], sense_mask=graph.sense_mask[keep])


def crop_to_radius(graph: MeshGraph, radius_chords: float = 1.0) -> MeshGraph:
    keep = (graph.sdf <= radius_chords * graph.chord) | (graph.node_type == WALL)
    if not np.any(keep & (graph.node_type == FLUID)):
        raise MeshError(f"crop at {radius_chords} chords removes every fluid node")
    return subgraph(graph, keep)


def mesh_to_graph(mesh: TriMesh, radius_chords: float = 1.0) -> MeshGraph:
    """Full translation: dual graph, wall chain, sdf, crop."""
    g = build_dual_graph(mesh)
    g = attach_surface_chain(g, mesh)
    g = compute_sdf(g, mesh)
    return crop_to_radius(g, radius_chords)


# --------------------------------------------------------------------------
# text mesh format: "nv nt ns chord", nv vertex lines, nt triangle lines, ns loop lines

def read_mesh(path: str | Path) -> TriMesh:
    tokens = Path(path).read_text().split()
    try:
        nv, nt, ns = (int(t) for t in tokens[:3])
        chord = float(tokens[3])
        pos = 4
        verts = np.array(tokens[pos:pos + 2 * nv], dtype=np.float64).reshape(nv, 2)
        pos += 2 * nv
        tris = np.array(tokens[pos:pos + 3 * nt], dtype=np.int64).reshape(nt, 3)
        pos += 3 * nt
        loop = np.array(tokens[pos:pos + ns], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    if len(loop) != ns:
        raise MeshError(f"malformed mesh file {path}: truncated surface loop")
    mesh = TriMesh(verts, tris, loop, chord)
    mesh.validate()
    return mesh


def write_mesh(mesh: TriMesh, path: str | Path) -> None:
    lines = [f"{len(mesh.vertices)} {len(mesh.triangles)} {len(mesh.surface_polyline)} {mesh.chord!r}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines += [str(v) for v in mesh.surface_polyline.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")
