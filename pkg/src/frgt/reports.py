"""Plain-text reports: parameter accounting and benchmark summaries."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .model import FrgtConfig, count_params, param_shapes

REFERENCE_PARAMS = 1.39e6


def parameter_breakdown(cfg: FrgtConfig) -> "OrderedDict[str, int]":
    """Parameter totals per block (node encoder, edge encoder, each layer, decoder)."""
    out: OrderedDict[str, int] = OrderedDict()
    for name, shape in param_shapes(cfg).items():
        block = name.split(".", 1)[0]
        out[block] = out.get(block, 0) + int(np.prod(shape))
    return out


def parameter_report(cfg: FrgtConfig) -> str:
    d = cfg.d
    total = count_params(cfg)
    lines = [
        f"# Parameter count: {cfg.variant} config",
        "",
        f"total: {total} ({(total - REFERENCE_PARAMS) / REFERENCE_PARAMS:+.1%} vs {REFERENCE_PARAMS:.0f})",
        "",
        "Width assumptions:",
        f"- latent width d = {d}",
        f"- node/edge encoders: {cfg.enc_hidden_layers} hidden ReLU layers of width d, linear output to d",
        f"- decoder: {cfg.dec_hidden_layers} hidden ReLU layers of width d, linear output to 3",
        f"- GEN update MLP: {cfg.update_mlp_layers} linear layers, update MLP hidden width "
        f"{cfg.update_hidden_mult}d = {cfg.update_hidden_mult * d}; one learnable beta; LayerNorm (gain, bias) after",
        f"- attention: {cfg.heads} heads of width {cfg.head_dim}; per head W_Q, W_K, W_V (d x {cfg.head_dim}, no bias)"
        + (" and LayerNorm gain/bias on K and V" if cfg.attn_layer_norm else ""),
        "- attention output W_O (d x d) with bias; feed-forward d -> d -> d with ReLU, residual around both",
        f"- layers: L={cfg.L}, T={cfg.T}" if cfg.variant == "stacked" else f"- layers: C={cfg.C}",
        "",
        "| block | parameters |",
        "|---|---:|",
    ]
    lines += [f"| {k} | {v} |" for k, v in parameter_breakdown(cfg).items()]
    lines.append(f"| total | {total} |")
    return "\n".join(lines) + "\n"
