"""FRGT network: encode -> message passing / linear attention -> decode."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import diffcore as dc
from .diffcore import Segments, Tensor

NODE_IN = 4
EDGE_IN = 4
NODE_OUT = 3


class ConfigError(ValueError):
    pass


@dataclass
class FrgtConfig:
    variant: str = "stacked"          # "stacked" or "interleaved"
    L: int = 10                       # message-passing layers (stacked)
    T: int = 1                        # attention layers (stacked)
    C: int = 5                        # combined layers (interleaved)
    d: int = 160
    heads: int = 4
    head_dim: int = 0                 # 0 -> d // heads
    enc_hidden_layers: int = 3
    dec_hidden_layers: int = 3
    update_mlp_layers: int = 2
    update_hidden_mult: int = 2       # hidden width of the update MLP is mult * d
    eps: float = 1e-7
    beta_init: float = 1.0
    global_dim: int = 0
    attn_layer_norm: bool = True
    input_stats: dict | None = None   # per-column mean/std of node and edge inputs, set by the trainer

    def __post_init__(self):
        if self.head_dim == 0 and self.heads > 0:
            self.head_dim = self.d // self.heads
        self.validate()

    def validate(self) -> None:
        if self.variant not in ("stacked", "interleaved"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.heads < 1 or self.heads * self.head_dim != self.d:
            raise ConfigError(f"heads * head_dim must equal d ({self.heads}*{self.head_dim} != {self.d})")
        if self.variant == "stacked" and (self.L < 1 or self.T < 1):
            raise ConfigError("stacked variant needs L >= 1 and T >= 1")
        if self.variant == "interleaved" and self.C < 1:
            raise ConfigError("interleaved variant needs C >= 1")
        if self.update_mlp_layers < 1 or self.enc_hidden_layers < 0 or self.dec_hidden_layers < 0:
            raise ConfigError("layer counts must be non-negative")

    @property
    def n_mp(self) -> int:
        return self.L if self.variant == "stacked" else self.C

    @property
    def n_attn(self) -> int:
        return self.T if self.variant == "stacked" else self.C

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FrgtConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


Params = dict  # name -> Tensor


def _mlp_shapes(prefix: str, n_in: int, hidden: int, n_hidden: int, n_out: int) -> dict:
    widths = [n_in] + [hidden] * n_hidden + [n_out]
    out = {}
    for k in range(len(widths) - 1):
        out[f"{prefix}.{k}.W"] = (widths[k], widths[k + 1])
        out[f"{prefix}.{k}.b"] = (widths[k + 1],)
    return out


def param_shapes(cfg: FrgtConfig) -> dict[str, tuple[int, ...]]:
    d, dh = cfg.d, cfg.head_dim
    shapes = {}
    shapes.update(_mlp_shapes("enc_node", NODE_IN + cfg.global_dim, d, cfg.enc_hidden_layers, d))
    shapes.update(_mlp_shapes("enc_edge", EDGE_IN, d, cfg.enc_hidden_layers, d))
    for l in range(cfg.n_mp):
        p = f"mp{l}"
        shapes.update(_mlp_shapes(f"{p}.mlp", d, cfg.update_hidden_mult * d, cfg.update_mlp_layers - 1, d))
        shapes[f"{p}.beta"] = (1,)
        shapes[f"{p}.ln.g"] = (d,)
        shapes[f"{p}.ln.b"] = (d,)
    for t in range(cfg.n_attn):
        p = f"attn{t}"
        for h in range(cfg.heads):
            shapes[f"{p}.h{h}.WQ"] = (d, dh)
            shapes[f"{p}.h{h}.WK"] = (d, dh)
            shapes[f"{p}.h{h}.WV"] = (d, dh)
            if cfg.attn_layer_norm:
                for which in ("K", "V"):
                    shapes[f"{p}.h{h}.ln{which}.g"] = (dh,)
                    shapes[f"{p}.h{h}.ln{which}.b"] = (dh,)
        shapes[f"{p}.WO"] = (d, d)
        shapes[f"{p}.bO"] = (d,)
        shapes.update(_mlp_shapes(f"{p}.ff", d, d, 1, d))
    shapes.update(_mlp_shapes("dec", d, d, cfg.dec_hidden_layers, NODE_OUT))
    return shapes


def count_params(cfg: FrgtConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg: FrgtConfig, seed: int = 0, dtype=np.float32) -> Params:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases; LN gains 1, biases 0; beta = beta_init."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.endswith(".beta"):
            arr = np.full(shape, cfg.beta_init)
        elif ".ln" in name:
            arr = np.ones(shape) if leaf == "g" else np.zeros(shape)
        elif leaf in ("b", "bO"):
            arr = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            arr = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


def cast_params(params: Params, dtype) -> Params:
    return {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in params.items()}


@dataclass
class GraphInputs:
    """Dense per-graph model inputs plus cached segment structures."""
    x: np.ndarray          # (n, 4 [+ global_dim])
    e: np.ndarray          # (m, 4)
    src: Segments
    dst: Segments

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @classmethod
    def build(cls, x, e, edges, dtype=np.float32, globals_=None) -> "GraphInputs":
        x = np.asarray(x)
        if globals_ is not None and len(globals_):
            x = np.column_stack([x, np.broadcast_to(np.asarray(globals_), (len(x), len(globals_)))])
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        order = np.argsort(edges[:, 1], kind="stable")  # receiver-sorted edges
        edges = edges[order]
        n = len(x)
        return cls(x.astype(dtype), np.asarray(e)[order].astype(dtype),
                   Segments(edges[:, 0], n), Segments(edges[:, 1], n))

    def permute(self, perm: np.ndarray) -> "GraphInputs":
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        edges = np.column_stack([inv[self.src.ids], inv[self.dst.ids]])
        return GraphInputs.build(self.x[perm], self.e, edges, dtype=self.x.dtype)


def mlp(params: Params, prefix: str, x: Tensor, activate_output: bool = False) -> Tensor:
    k = 0
    while f"{prefix}.{k + 1}.W" in params:
        x = dc.relu(dc.add(x @ params[f"{prefix}.{k}.W"], params[f"{prefix}.{k}.b"]))
        k += 1
    x = dc.add(x @ params[f"{prefix}.{k}.W"], params[f"{prefix}.{k}.b"])
    return dc.relu(x) if activate_output else x


def input_stats(xs, es) -> dict:
    """Column mean/std over stacked node and edge inputs; constant columns get std 1."""
    out = {}
    for key, arrs in (("x", xs), ("e", es)):
        a = np.concatenate([np.asarray(v, dtype=np.float64) for v in arrs])
        sd = a.std(axis=0)
        out[f"{key}_mean"] = a.mean(axis=0).tolist()
        out[f"{key}_std"] = np.where(sd > 1e-12, sd, 1.0).tolist()
    return out


def standardize(cfg: FrgtConfig, x, e):
    """Applied to raw arrays only; tensors pass through so input gradients survive."""
    s = cfg.input_stats
    if not s or isinstance(x, Tensor) or isinstance(e, Tensor):
        return x, e
    x, e = np.asarray(x), np.asarray(e)
    x = (x - np.asarray(s["x_mean"], dtype=x.dtype)) / np.asarray(s["x_std"], dtype=x.dtype)
    e = (e - np.asarray(s["e_mean"], dtype=e.dtype)) / np.asarray(s["e_std"], dtype=e.dtype)
    return x, e


def encode(params: Params, cfg: FrgtConfig, x, e) -> tuple[Tensor, Tensor]:
    if x.shape[1] != NODE_IN + cfg.global_dim:
        raise ConfigError(f"node inputs need {NODE_IN + cfg.global_dim} channels, got {x.shape[1]}")
    if e.shape[1] != EDGE_IN:
        raise ConfigError(f"edge inputs need {EDGE_IN} channels, got {e.shape[1]}")
    x, e = standardize(cfg, x, e)
    x, e = dc.as_tensor(x), dc.as_tensor(e)
    return mlp(params, "enc_node", x, activate_output=True), mlp(params, "enc_edge", e, activate_output=True)


def gen_messages(h: Tensor, a: Tensor, src, eps: float) -> Tensor:
    """m_ij = ReLU(h_j + a_ij) + eps for every directed edge j -> i."""
    return dc.add_scalar(dc.relu(dc.gather_rows(h, src) + a), eps)


def gen_layer(params: Params, prefix: str, cfg: FrgtConfig, h: Tensor, a: Tensor,
              src, dst, n: int) -> Tensor:
    m = gen_messages(h, a, src, cfg.eps)
    agg = dc.segment_softmax_weighted_sum(m, dst, n, params[f"{prefix}.beta"])
    z = mlp(params, f"{prefix}.mlp", h + agg)
    return dc.layer_norm(z, params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])


def galerkin_heads(params: Params, prefix: str, cfg: FrgtConfig, h: Tensor) -> Tensor:
    """Concatenated heads Q (K^T V) / n, K and V layer-normalized per head."""
    n = h.shape[0]
    heads = []
    for k in range(cfg.heads):
        p = f"{prefix}.h{k}"
        q = h @ params[f"{p}.WQ"]
        key = h @ params[f"{p}.WK"]
        val = h @ params[f"{p}.WV"]
        if cfg.attn_layer_norm:
            key = dc.layer_norm(key, params[f"{p}.lnK.g"], params[f"{p}.lnK.b"])
            val = dc.layer_norm(val, params[f"{p}.lnV.g"], params[f"{p}.lnV.b"])
        heads.append(dc.scale(q @ (dc.transpose(key) @ val), 1.0 / n))
    return heads[0] if len(heads) == 1 else dc.concat(heads)


def galerkin_attention(params: Params, prefix: str, cfg: FrgtConfig, h: Tensor) -> Tensor:
    z = dc.add(galerkin_heads(params, prefix, cfg, h) @ params[f"{prefix}.WO"], params[f"{prefix}.bO"])
    h = h + z
    return h + mlp(params, f"{prefix}.ff", h)


def decode(params: Params, h: Tensor) -> Tensor:
    return mlp(params, "dec", h)


def forward(params: Params, cfg: FrgtConfig, g: GraphInputs) -> Tensor:
    """(n, 3) normalized predictions [p, u_x, u_y]."""
    h, a = encode(params, cfg, g.x, g.e)
    n = g.n
    if cfg.variant == "stacked":
        for l in range(cfg.L):
            h = gen_layer(params, f"mp{l}", cfg, h, a, g.src, g.dst, n)
        for t in range(cfg.T):
            h = galerkin_attention(params, f"attn{t}", cfg, h)
    else:
        for c in range(cfg.C):
            h = gen_layer(params, f"mp{c}", cfg, h, a, g.src, g.dst, n)
            h = galerkin_attention(params, f"attn{c}", cfg, h)
    return decode(params, h)
