"""Reconstruction metrics, coverage studies and field export."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import Tensor
from .flownorm import denormalize
from .graphstore import load_checkpoint
from .meshgraph import MeshGraph
from .trainer import Sample, TrainConfig, load_samples, predict

CHANNELS = ("p", "ux", "uy")
UNITS = ("Pa", "m/s", "m/s")


def metrics(pred, target) -> dict:
    """Per-channel RMSE, max |error| and R^2 (None when the target is constant)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    err = pred - target
    ss_res = (err ** 2).sum(axis=0)
    ss_tot = ((target - target.mean(axis=0)) ** 2).sum(axis=0)
    r2 = [None if t == 0 else float(1 - r / t) for r, t in zip(ss_res, ss_tot)]
    return {
        "rmse": np.sqrt((err ** 2).mean(axis=0)).tolist(),
        "max_abs": np.abs(err).max(axis=0).tolist(),
        "r2": r2,
    }


@dataclass
class EvalReport:
    per_graph: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    coverage: float = 1.0
    n_nodes: int = 0
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def table(self) -> str:
        rows = [f"{'channel':<8}{'rmse':>14}{'max_abs':>14}{'r2':>10}"]
        for k, (ch, unit) in enumerate(zip(CHANNELS, UNITS)):
            r2 = self.aggregate["r2"][k]
            rows.append(f"{ch + ' [' + unit + ']':<8}{self.aggregate['rmse'][k]:>14.6g}"
                        f"{self.aggregate['max_abs'][k]:>14.6g}{'undef' if r2 is None else f'{r2:.4f}':>10}")
        rows.append(f"graphs={len(self.per_graph)} nodes={self.n_nodes} coverage={self.coverage}")
        return "\n".join(rows)


def physical_predictions(params, cfg, sample: Sample) -> np.ndarray:
    return denormalize(predict(params, cfg, sample).astype(np.float64), sample.stats)


def evaluate_samples(params, cfg, samples: list[Sample], coverage: float = 1.0) -> EvalReport:
    """Metrics in physical units over each sample's evaluation rows.

    The aggregate is computed on the concatenated rows, so aggregate RMSE is the
    root of the node-weighted mean squared error across graphs.
    """
    t0 = time.perf_counter()
    preds, tgts, per_graph = [], [], []
    for s in samples:
        pred = physical_predictions(params, cfg, s)[s.nodes]
        tgt = s.graph.target[s.nodes].astype(np.float64)
        per_graph.append({"name": s.name, "n": int(len(s.nodes)), **metrics(pred, tgt)})
        preds.append(pred)
        tgts.append(tgt)
    agg = metrics(np.concatenate(preds), np.concatenate(tgts))
    return EvalReport(per_graph, agg, coverage, int(sum(len(t) for t in tgts)),
                      time.perf_counter() - t0)


def resolve_checkpoint(path) -> Path:
    """A training output directory resolves to its ``best`` checkpoint, else ``last``."""
    path = Path(path)
    if not (path / "manifest.json").exists():
        for sub in ("best", "last"):
            if (path / sub / "manifest.json").exists():
                return path / sub
    return path


def load_model(ckpt):
    params, cfg, manifest, _ = load_checkpoint(resolve_checkpoint(ckpt))
    tensors = {k: Tensor(v, name=k) for k, v in params.items()}
    tcfg = TrainConfig.from_dict(manifest.get("training", {}).get("train_config", {}))
    return tensors, cfg, tcfg


def evaluate_checkpoint(ckpt, bundle_paths, coverage: float | None = None) -> EvalReport:
    params, cfg, tcfg = load_model(ckpt)
    frac = tcfg.coverage_fraction if coverage is None else coverage
    samples = load_samples(bundle_paths, tcfg, frac)
    return evaluate_samples(params, cfg, samples, frac)


def rmse_change(report: EvalReport, baseline: EvalReport) -> list[float]:
    """Percent change of aggregate RMSE per channel relative to ``baseline``."""
    return [100.0 * (r - b) / b for r, b in zip(report.aggregate["rmse"], baseline.aggregate["rmse"])]


def coverage_study(reports: dict[float, EvalReport]) -> dict:
    """RMSE change (%) of every fraction against the full-coverage report."""
    if 1.0 not in reports:
        raise ValueError("coverage study needs a full-coverage (1.0) baseline")
    base = reports[1.0]
    return {f: rmse_change(reports[f], base) for f in sorted(reports, reverse=True)}


def coverage_table(changes: dict) -> str:
    fracs = list(changes)
    rows = [f"{'metric':<26}" + "".join(f"{f'{f:.0%}':>10}" for f in fracs)]
    for k, ch in enumerate(("Pressure", "x-Velocity", "y-Velocity")):
        rows.append(f"{ch + ' RMSE change [%]':<26}" + "".join(f"{changes[f][k]:>+10.2f}" for f in fracs))
    return "\n".join(rows)


# --------------------------------------------------------------------------
# export

def export_fields(graph: MeshGraph, pred, path, fmt: str = "vtk") -> Path:
    """Write predictions and truth as a legacy-VTK vertex grid or CSV."""
    path = Path(path)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != (graph.n_nodes, 3):
        raise ValueError(f"prediction shape {pred.shape}, expected ({graph.n_nodes}, 3)")
    true = np.asarray(graph.target, dtype=np.float64)
    xy = np.asarray(graph.positions, dtype=np.float64)
    if fmt == "csv":
        header = "x,y,p,ux,uy,p_true,ux_true,uy_true"
        np.savetxt(path, np.column_stack([xy, pred, true]), delimiter=",", header=header,
                   comments="", fmt="%.17g")
        return path
    if fmt != "vtk":
        raise ValueError(f"unknown export format {fmt!r}")
    n = graph.n_nodes
    lines = ["# vtk DataFile Version 3.0", "frgt reconstruction", "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in xy]
    # one VTK_VERTEX cell (type 1) per node
    lines.append(f"CELLS {n} {2 * n}")
    lines += [f"1 {i}" for i in range(n)]
    lines.append(f"CELL_TYPES {n}")
    lines += ["1"] * n
    lines.append(f"POINT_DATA {n}")
    speed = np.hypot(pred[:, 1], pred[:, 2])
    fields = {"p": pred[:, 0], "u_x": pred[:, 1], "u_y": pred[:, 2], "u_mag": speed,
              "err_p": pred[:, 0] - true[:, 0], "err_u_x": pred[:, 1] - true[:, 1],
              "err_u_y": pred[:, 2] - true[:, 2], "node_type": graph.node_type.astype(np.float64)}
    for name, vals in fields.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.17g}" for v in vals]
    path.write_text("\n".join(lines) + "\n")
    return path
