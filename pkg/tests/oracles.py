"""Independent brute-force reference implementations used by the tests."""
import itertools

import numpy as np


def dual_counts(triangles):
    """(nodes, directed edges) by checking every triangle pair for a shared side."""
    tris = [set(t) for t in np.asarray(triangles).tolist()]
    shared = sum(1 for a, b in itertools.combinations(tris, 2) if len(a & b) == 2)
    return len(tris), 2 * shared


def nearest(points, surface):
    points = np.asarray(points, float)
    surface = np.asarray(surface, float)
    out = np.empty(len(points))
    for i, p in enumerate(points):
        out[i] = np.sqrt(((surface - p) ** 2).sum(axis=1)).min()
    return out


def edge_pairs_ok(graph):
    """Bidirectionality, r antisymmetry and l / l_b symmetry by dictionary lookup."""
    feat = {}
    for (s, d), f in zip(graph.edges.tolist(), graph.edge_feat.tolist()):
        feat[(s, d)] = f
    for (s, d), f in feat.items():
        g = feat.get((d, s))
        if g is None or f[0] != -g[0] or f[1] != -g[1] or f[2] != g[2] or f[3] != g[3]:
            return False
    return True


def metrics_loop(pred, target):
    n, c = len(pred), len(pred[0])
    rmse, mx, r2 = [], [], []
    for k in range(c):
        se = 0.0
        m = 0.0
        mean = sum(target[i][k] for i in range(n)) / n
        tot = 0.0
        for i in range(n):
            e = pred[i][k] - target[i][k]
            se += e * e
            m = max(m, abs(e))
            tot += (target[i][k] - mean) ** 2
        rmse.append((se / n) ** 0.5)
        mx.append(m)
        r2.append(1 - se / tot)
    return rmse, mx, r2
