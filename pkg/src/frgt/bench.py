"""Synthetic potential-flow benchmarks shared by the scripts and the acceptance suite."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .evaluate import coverage_study, evaluate_samples
from .model import FrgtConfig, count_params
from .synthflow import DatasetSpec, GridSpec, generate_dataset, load_split
from .trainer import TrainConfig, Trainer, load_samples

log = logging.getLogger(__name__)


@dataclass
class BenchSpec:
    n_train: int = 200
    n_test: int = 40
    epochs: int = 100
    seed: int = 0
    grid: GridSpec = field(default_factory=lambda: GridSpec(48, 10))
    alpha_deg: tuple = (-20.0, 20.0)
    cylinder_fraction: float = 0.3
    lr0: float = 5e-4
    weight_decay: float = 1e-4

    def dataset(self) -> DatasetSpec:
        n = self.n_train + self.n_test
        return DatasetSpec(n_cases=n, seed=self.seed,
                           splits={"train": self.n_train / n, "test": self.n_test / n},
                           grid=self.grid, cylinder_fraction=self.cylinder_fraction,
                           alpha_deg_train=self.alpha_deg, alpha_deg_eval=self.alpha_deg)

    def train_config(self, coverage: float = 1.0) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr0=self.lr0, weight_decay=self.weight_decay,
                           seed=self.seed, coverage_fraction=coverage)


STACKED = FrgtConfig(variant="stacked", L=4, T=1, d=32, heads=4)
INTERLEAVED = FrgtConfig(variant="interleaved", C=2, d=32, heads=4)


def ensure_dataset(spec: BenchSpec, root) -> Path:
    root = Path(root)
    if not (root / "splits.json").exists():
        generate_dataset(spec.dataset(), root)
    return root


def overfit(n_graphs: int = 8, epochs: int = 500, seed: int = 0, cfg: FrgtConfig = STACKED,
            grid: GridSpec | None = None, out_dir=None, stop_after: int | None = None) -> dict:
    """Train on ``n_graphs`` graphs and report the final normalized training loss.

    ``stop_after`` ends the run early while keeping the ``epochs``-long learning-rate schedule.
    """
    import tempfile

    spec = DatasetSpec(n_cases=n_graphs, seed=seed, grid=grid or GridSpec())
    with tempfile.TemporaryDirectory() as tmp:
        data = generate_dataset(spec, out_dir or tmp)
        tcfg = TrainConfig(epochs=epochs, seed=seed)
        samples = load_samples(load_split(data, "train"), tcfg)
    t0 = time.perf_counter()
    tr = Trainer(cfg, tcfg, samples)
    tr.fit(epochs=stop_after or epochs)
    losses = [float(np.mean(r["ch"])) for r in tr.history]
    return {"final_loss": losses[-1], "losses": losses, "seconds": time.perf_counter() - t0,
            "n_nodes": [s.graph.n_nodes for s in samples], "params": count_params(cfg)}


def train_and_test(spec: BenchSpec, data, cfg: FrgtConfig, coverage: float = 1.0) -> dict:
    tcfg = spec.train_config(coverage)
    train = load_samples(load_split(data, "train"), tcfg)
    test = load_samples(load_split(data, "test"), tcfg)
    t0 = time.perf_counter()
    tr = Trainer(cfg, tcfg, train)
    tr.fit(epochs=spec.epochs)
    seconds = time.perf_counter() - t0
    report = evaluate_samples(tr.params, tr.cfg, test, coverage)
    log.info("%s coverage=%.2f r2=%s (%.0fs)", cfg.variant, coverage, report.aggregate["r2"], seconds)
    return {"config": tr.cfg.to_dict(), "params": count_params(cfg), "coverage": coverage,
            "train_seconds": seconds, "final_train_loss": float(np.mean(tr.history[-1]["ch"])),
            "report": report}


def generalization(spec: BenchSpec, data, configs=(STACKED, INTERLEAVED)) -> dict:
    """Test-set metrics for every architecture variant on the same dataset."""
    return {cfg.variant: train_and_test(spec, data, cfg) for cfg in configs}


def coverage_trend(spec: BenchSpec, data, fractions=(1.0, 0.6, 0.2), cfg: FrgtConfig = STACKED,
                   baseline=None) -> dict:
    """One model per coverage fraction, evaluated at its own fraction."""
    runs = {}
    for f in fractions:
        if f == 1.0 and baseline is not None:
            runs[f] = baseline
        else:
            runs[f] = train_and_test(spec, data, cfg, f)
    changes = coverage_study({f: r["report"] for f, r in runs.items()})
    return {"runs": runs, "changes": changes}


def nondecreasing(changes: dict) -> list[bool]:
    """Per channel: change% never drops as coverage decreases."""
    fracs = sorted(changes, reverse=True)
    return [all(changes[a][k] <= changes[b][k] for a, b in zip(fracs, fracs[1:])) for k in range(3)]


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def spec_dict(spec: BenchSpec) -> dict:
    return asdict(replace(spec))
