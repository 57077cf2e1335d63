"""End-to-end finite-difference check of the assembled model loss."""
from __future__ import annotations

import numpy as np

from .diffcore import GradCheckReport, Tensor, grad_check
from .model import FrgtConfig, GraphInputs, forward, init_params
from .trainer import l2_loss


def tiny_graph(n: int = 12, seed: int = 0) -> tuple[GraphInputs, np.ndarray]:
    """Ring plus a few chords, random inputs and targets, float64."""
    rng = np.random.default_rng(seed)
    pairs = [(i, (i + 1) % n) for i in range(n)] + [(0, n // 2), (1, n // 3)]
    e = np.array(pairs + [(b, a) for a, b in pairs])
    x = rng.standard_normal((n, 4))
    ef = rng.standard_normal((len(e), 4))
    return GraphInputs.build(x, ef, e, dtype=np.float64), rng.standard_normal((n, 3))


def model_grad_check(seed: int = 0, variant: str = "stacked", d: int = 4, heads: int = 2) -> GradCheckReport:
    cfg = FrgtConfig(variant=variant, L=2, T=1, C=1, d=d, heads=heads)
    params = init_params(cfg, seed, dtype=np.float64)
    # random biases keep pre-activations off the ReLU kink (zero init puts dead rows exactly at 0)
    rng = np.random.default_rng(seed + 1)
    for k, t in params.items():
        if k.rsplit(".", 1)[-1] in ("b", "bO") and ".ln" not in k:
            t.data[...] = rng.uniform(-0.5, 0.5, t.data.shape)
    # beta away from 1 so its gradient is exercised non-trivially
    params["mp0.beta"].data[:] = 1.7
    names = list(params)
    g, target = tiny_graph(seed=seed)

    def loss(*arrays):
        p = {k: (a if isinstance(a, Tensor) else Tensor(a)) for k, a in zip(names, arrays)}
        return l2_loss(forward(p, cfg, g), target)

    rep = grad_check(loss, [], seed=seed, inputs=[params[k].data for k in names], name=f"model_{variant}")
    return rep
