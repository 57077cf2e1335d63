"""Supervised training of the FRGT model on bundle datasets."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .featprop import DEFAULT_ITERATIONS, init_node_inputs
from .flownorm import NormStats, compute_stats, normalize
from .graphstore import load_bundle, load_checkpoint, save_checkpoint
from .meshgraph import FLUID, MeshGraph
from .model import FrgtConfig, GraphInputs, forward, init_params, input_stats
from .synthflow import load_split, mask_coverage

log = logging.getLogger(__name__)

CSV_HEADER = ["epoch", "split", "loss_p", "loss_ux", "loss_uy", "loss_total", "lr"]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 500
    lr0: float = 5e-4
    lr_min: float = 0.0
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    accumulate: int = 1                 # graphs per optimizer step
    loss_node_set: str = "fluid_only"   # or "all"
    coverage_fraction: float = 1.0
    fp_iters: int = DEFAULT_ITERATIONS
    fp_kind: str = "row"
    standardize_inputs: bool = True     # z-score node/edge inputs with training-set statistics

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.loss_node_set not in ("fluid_only", "all"):
            raise ValueError(f"unknown loss_node_set {self.loss_node_set!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# --------------------------------------------------------------------------
# loss / optimizer / schedule

def loss_nodes(graph: MeshGraph, node_set: str) -> np.ndarray:
    if node_set == "all":
        return np.arange(graph.n_nodes)
    return np.flatnonzero(graph.node_type == FLUID)


def l2_loss(pred: Tensor, target, nodes=None) -> Tensor:
    """Mean squared error over the selected rows, channels weighted equally."""
    target = np.asarray(target)
    if nodes is not None:
        nodes = np.asarray(nodes)
        if nodes.size == 0:
            raise ValueError("empty loss node set")
        pred = dc.gather_rows(pred, nodes)
        target = target[nodes]
    diff = dc.sub(pred, Tensor(target.astype(pred.dtype)))
    return dc.scale(dc.tsum(dc.mul(diff, diff)), 1.0 / diff.data.size)


def channel_mse(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return (d * d).mean(axis=0)


def cosine_lr(t: int, T: int, lr0: float, lr_min: float = 0.0) -> float:
    if t < 0 or t > T:
        raise ValueError(f"step {t} outside schedule [0, {T}]")
    if T == 0:
        return lr0
    return lr_min + 0.5 * (lr0 - lr_min) * (1 + math.cos(math.pi * t / T))


def adam_state(params: dict) -> dict:
    return {"t": 0,
            "m": {k: np.zeros_like(v.data) for k, v in params.items()},
            "v": {k: np.zeros_like(v.data) for k, v in params.items()}}


def adamw_step(params: dict, grads: dict, state: dict, lr: float, weight_decay: float = 0.0,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place AdamW update; decay is applied to the weights before the Adam term."""
    state["t"] += 1
    t = state["t"]
    bc1 = 1 - beta1 ** t
    bc2 = 1 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        w = p.data
        f = w.dtype.type
        m = state["m"][name]
        v = state["v"][name]
        m *= f(beta1)
        m += f(1 - beta1) * g
        v *= f(beta2)
        v += f(1 - beta2) * (g * g)
        if weight_decay:
            w *= f(1 - lr * weight_decay)
        w -= f(lr / bc1) * m / (np.sqrt(v / f(bc2)) + f(eps))


# --------------------------------------------------------------------------
# data preparation

@dataclass
class Sample:
    name: str
    graph: MeshGraph          # raw physical graph (after coverage masking)
    stats: NormStats
    inputs: GraphInputs
    target: np.ndarray        # normalized (n, 3)
    nodes: np.ndarray         # loss / evaluation rows


def prepare(graph: MeshGraph, name: str, tcfg: TrainConfig, coverage: float | None = None,
            dtype=np.float32) -> Sample:
    """coverage mask -> surface stats -> normalize -> feature propagation -> model inputs."""
    frac = tcfg.coverage_fraction if coverage is None else coverage
    g = mask_coverage(graph, frac) if frac < 1 else graph
    stats = compute_stats(g)
    gn = normalize(g, stats)
    x = init_node_inputs(gn, tcfg.fp_iters, tcfg.fp_kind)
    inputs = GraphInputs.build(x, gn.edge_feat, gn.edges, dtype=dtype)
    return Sample(name, g, stats, inputs, gn.target.astype(dtype), loss_nodes(g, tcfg.loss_node_set))


def load_samples(paths, tcfg: TrainConfig, coverage: float | None = None) -> list[Sample]:
    out = []
    for p in paths:
        g, _ = load_bundle(p)
        out.append(prepare(g, Path(p).name, tcfg, coverage))
    return out


def predict(params: dict, cfg: FrgtConfig, sample: Sample) -> np.ndarray:
    return forward(params, cfg, sample.inputs).data


def evaluate_losses(params: dict, cfg: FrgtConfig, samples: list[Sample]) -> np.ndarray:
    """Node-weighted per-channel MSE over the samples' loss rows."""
    total = np.zeros(3)
    count = 0
    for s in samples:
        pred = predict(params, cfg, s)
        total += channel_mse(pred[s.nodes], s.target[s.nodes]) * len(s.nodes)
        count += len(s.nodes)
    return total / max(count, 1)


# --------------------------------------------------------------------------
# training loop

class Trainer:
    """Owns parameters, optimizer state and the step counter for one run."""

    def __init__(self, cfg: FrgtConfig, tcfg: TrainConfig, train: list[Sample],
                 val: list[Sample] | None = None, params: dict | None = None):
        if not train:
            raise TrainingError("empty training set")
        if tcfg.standardize_inputs and cfg.input_stats is None and params is None:
            cfg = replace(cfg, input_stats=input_stats([s.inputs.x for s in train], [s.inputs.e for s in train]))
        self.cfg, self.tcfg = cfg, tcfg
        self.train_set, self.val_set = train, val or []
        self.params = params if params is not None else init_params(cfg, tcfg.seed)
        self.opt = adam_state(self.params)
        self.steps_per_epoch = math.ceil(len(train) / tcfg.accumulate)
        self.total_steps = tcfg.epochs * self.steps_per_epoch
        self.step = 0
        self.epoch = 0
        self.history: list[dict] = []

    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.tcfg.seed, epoch]).permutation(len(self.train_set))

    def lr(self) -> float:
        return cosine_lr(self.step, self.total_steps, self.tcfg.lr0, self.tcfg.lr_min)

    def _grads(self, sample: Sample) -> tuple[dict, float, np.ndarray]:
        with dc.Tape() as tape:
            pred = forward(self.params, self.cfg, sample.inputs)
            loss = l2_loss(pred, sample.target, sample.nodes)
        value = float(loss.data[0])
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss on graph {sample.name!r} at step {self.step}")
        per_ch = channel_mse(pred.data[sample.nodes], sample.target[sample.nodes])
        return tape.backward(loss), value, per_ch

    def train_step(self, batch: list[Sample]) -> tuple[float, np.ndarray]:
        acc: dict = {}
        ch = np.zeros(3)
        tot = 0.0
        for s in batch:
            grads, value, per_ch = self._grads(s)
            for k, g in grads.items():
                acc[k] = acc[k] + g if k in acc else g
            ch += per_ch
            tot += value
        if len(batch) > 1:
            acc = {k: g / np.float32(len(batch)) for k, g in acc.items()}
        t = self.tcfg
        adamw_step(self.params, acc, self.opt, self.lr(), t.weight_decay, t.beta1, t.beta2, t.adam_eps)
        self.step += 1
        return tot / len(batch), ch / len(batch)

    def run_epoch(self) -> dict:
        lr = self.lr()
        order = self.epoch_order(self.epoch)
        k = self.tcfg.accumulate
        ch_sum = np.zeros(3)
        for i in range(0, len(order), k):
            batch = [self.train_set[j] for j in order[i:i + k]]
            _, ch = self.train_step(batch)
            ch_sum += ch * len(batch)
        self.epoch += 1
        train_ch = ch_sum / len(order)
        rows = [{"epoch": self.epoch, "split": "train", "ch": train_ch, "lr": lr}]
        if self.val_set:
            rows.append({"epoch": self.epoch, "split": "val",
                         "ch": evaluate_losses(self.params, self.cfg, self.val_set), "lr": lr})
        self.history += rows
        return {r["split"]: float(r["ch"].mean()) for r in rows}

    def fit(self, out_dir: str | Path | None = None, epochs: int | None = None) -> list[dict]:
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        best = math.inf
        n_epochs = self.tcfg.epochs - self.epoch if epochs is None else epochs
        for _ in range(n_epochs):
            res = self.run_epoch()
            score = res.get("val", res["train"])
            log.info("epoch %d train %.5g val %s", self.epoch, res["train"], res.get("val"))
            if out is not None:
                write_metrics(out / "metrics.csv", self.history)
                if score < best:
                    best = score
                    self.save(out / "best")
        if out is not None:
            self.save(out / "last")
        return self.history

    def save(self, path) -> Path:
        return save_checkpoint(self.params, self.cfg, path, seed=self.tcfg.seed,
                               extra={"epoch": self.epoch, "step": self.step,
                                      "total_steps": self.total_steps, "train_config": self.tcfg.to_dict()},
                               opt_state=self.opt)

    @classmethod
    def resume(cls, path, train: list[Sample], val: list[Sample] | None = None) -> "Trainer":
        params, cfg, manifest, opt = load_checkpoint(path)
        tcfg = TrainConfig.from_dict(manifest["training"]["train_config"])
        tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
        tr = cls(cfg, tcfg, train, val, params=tensors)
        if opt is not None:
            tr.opt = opt
        tr.step = manifest["training"]["step"]
        tr.epoch = manifest["training"]["epoch"]
        return tr


def write_metrics(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in history:
            ch = r["ch"]
            w.writerow([r["epoch"], r["split"], repr(float(ch[0])), repr(float(ch[1])),
                        repr(float(ch[2])), repr(float(np.mean(ch))), repr(float(r["lr"]))])


def train(data_dir, cfg: FrgtConfig, tcfg: TrainConfig, out_dir) -> Trainer:
    """Train on the ``train`` split of a dataset directory, validating on ``val``."""
    train_set = load_samples(load_split(data_dir, "train"), tcfg)
    val_paths = load_split(data_dir, "val")
    val_set = load_samples(val_paths, tcfg) if val_paths else []
    tr = Trainer(cfg, tcfg, train_set, val_set)
    tr.fit(out_dir)
    return tr
