"""Feature Propagation: fill missing node features by diffusion with known-value reset."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .meshgraph import FLUID, WALL, MeshGraph

DEFAULT_ITERATIONS = 30


class PropagationError(ValueError):
    pass


@dataclass
class MaskedFeatures:
    values: np.ndarray      # (n, c), NaN where missing
    known_mask: np.ndarray  # (n, c) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.known_mask = np.asarray(self.known_mask, dtype=bool).reshape(self.values.shape)
        if not np.all(np.isfinite(self.values[self.known_mask])):
            raise PropagationError("known entries must be finite")


def adjacency(n: int, edges: np.ndarray) -> sp.csr_matrix:
    """Unweighted undirected adjacency; duplicate and self edges are dropped."""
    e = np.asarray(edges).reshape(-1, 2)
    e = e[e[:, 0] != e[:, 1]]
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    A.data[:] = 1.0  # collapse duplicates
    return A


def diffusion_operator(A: sp.csr_matrix, kind: str = "row") -> sp.csr_matrix:
    """D^-1 A (``row``, row-stochastic) or D^-1/2 A D^-1/2 (``sym``)."""
    deg = np.asarray(A.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        if kind == "row":
            inv = np.where(deg > 0, 1.0 / deg, 0.0)
            return sp.diags(inv) @ A
        if kind == "sym":
            inv = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
            return sp.diags(inv) @ A @ sp.diags(inv)
    raise ValueError(f"unknown diffusion kind {kind!r}")


def propagate_matrix(n: int, edges: np.ndarray, feats: MaskedFeatures,
                     iterations: int = DEFAULT_ITERATIONS, kind: str = "row") -> np.ndarray:
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    x = feats.values
    known = feats.known_mask
    if x.shape[0] != n:
        raise PropagationError(f"feature rows {x.shape[0]} != node count {n}")
    A = adjacency(n, edges)
    n_comp, labels = connected_components(A, directed=False)

    # start every missing entry at the mean of known entries in its component;
    # with row-stochastic averaging this keeps iterates inside the known range
    out = np.where(known, x, 0.0)
    lo = np.full((n_comp, x.shape[1]), np.inf)
    hi = np.full((n_comp, x.shape[1]), -np.inf)
    for c in range(x.shape[1]):
        kc = known[:, c]
        cnt = np.bincount(labels[kc], minlength=n_comp)
        if np.any(cnt == 0):
            comp = int(np.flatnonzero(cnt == 0)[0])
            nodes = np.flatnonzero(labels == comp)
            raise PropagationError(
                f"connected component {comp} (nodes {nodes[:5].tolist()}...) has no known value "
                f"in channel {c}")
        mean = np.bincount(labels[kc], weights=x[kc, c], minlength=n_comp) / cnt
        out[~kc, c] = mean[labels[~kc]]
        np.minimum.at(lo, (labels[kc], c), x[kc, c])
        np.maximum.at(hi, (labels[kc], c), x[kc, c])

    P = diffusion_operator(A, kind)
    isolated = np.asarray(A.sum(axis=1)).ravel() == 0
    for _ in range(iterations):
        nxt = P @ out
        nxt[isolated] = out[isolated]
        if kind == "row":
            # exact averaging never leaves the known range; this only removes rounding spill
            nxt = np.clip(nxt, lo[labels], hi[labels])
        out = np.where(known, x, nxt)
    return out


def propagate(graph: MeshGraph, feats: MaskedFeatures, iterations: int = DEFAULT_ITERATIONS,
              kind: str = "row") -> np.ndarray:
    """Dense (n, c) features; known entries are returned unchanged."""
    return propagate_matrix(graph.n_nodes, graph.edges, feats, iterations, kind)


def init_node_inputs(graph: MeshGraph, iterations: int = DEFAULT_ITERATIONS,
                     kind: str = "row") -> np.ndarray:
    """Model node inputs ``[p, t_fluid, t_wall, sdf/chord]`` for a normalized graph."""
    p = np.where(graph.sense_mask, graph.pressure_obs, np.nan)
    feats = MaskedFeatures(p[:, None], graph.sense_mask[:, None])
    p_full = propagate(graph, feats, iterations, kind)[:, 0]
    return np.column_stack([
        p_full,
        (graph.node_type == FLUID).astype(np.float64),
        (graph.node_type == WALL).astype(np.float64),
        graph.sdf / graph.chord,
    ])
