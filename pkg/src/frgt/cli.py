"""Command-line entry point: ``frgt <subcommand> ...``."""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("frgt")


def parse_kv_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _coerce(cls, values: dict) -> dict:
    kinds = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for k, v in values.items():
        if k not in kinds:
            continue
        t = str(kinds[k])
        if t in ("int", "<class 'int'>"):
            out[k] = int(v)
        elif t in ("float", "<class 'float'>"):
            out[k] = float(v)
        elif t in ("bool", "<class 'bool'>"):
            out[k] = str(v).lower() in ("1", "true", "yes", "on")
        else:
            out[k] = v
    return out


def build_configs(config_path=None, **overrides):
    from .model import FrgtConfig
    from .trainer import TrainConfig

    raw = parse_kv_config(config_path) if config_path else {}
    known = {f.name for f in dataclasses.fields(FrgtConfig)} | {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return FrgtConfig(**_coerce(FrgtConfig, raw)), TrainConfig(**_coerce(TrainConfig, raw))


@contextlib.contextmanager
def _threads(deterministic: bool):
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


def _splits(text: str) -> dict:
    out = {}
    for part in text.split(","):
        k, v = part.split("=")
        out[k.strip()] = float(v)
    return out


# --------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args) -> int:
    from .synthflow import DatasetSpec, GridSpec, generate_dataset

    spec = DatasetSpec(n_cases=args.n_cases, seed=args.seed, splits=_splits(args.split_frac),
                       grid=GridSpec(args.n_theta, args.n_r, args.outer_radius, args.growth),
                       cylinder_fraction=args.cylinder_fraction)
    if args.alpha_eval is not None:
        spec.alpha_deg_eval = (-args.alpha_eval, args.alpha_eval)
    out = generate_dataset(spec, args.out)
    print(f"wrote {args.n_cases} bundles to {out}")
    return 0


def cmd_train(args) -> int:
    from .trainer import train

    cfg, tcfg = build_configs(args.config, seed=args.seed, coverage_fraction=args.coverage,
                              epochs=args.epochs)
    with _threads(args.deterministic):
        tr = train(args.data, cfg, tcfg, args.out)
    last = tr.history[-1]
    print(f"trained {tr.epoch} epochs, {tr.step} steps; final {last['split']} loss "
          f"{float(np.mean(last['ch'])):.6g}; checkpoints in {args.out}")
    return 0


def cmd_infer(args) -> int:
    from .evaluate import evaluate_samples, load_model, physical_predictions
    from .graphstore import load_bundle
    from .trainer import prepare

    params, cfg, tcfg = load_model(args.ckpt)
    graph, _ = load_bundle(args.bundle)
    sample = prepare(graph, Path(args.bundle).name, tcfg)
    t0 = time.perf_counter()
    pred = physical_predictions(params, cfg, sample)
    seconds = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pred.astype("<f4").tofile(out / "pred.f32")
    report = evaluate_samples(params, cfg, [sample], tcfg.coverage_fraction)
    summary = {"bundle": str(args.bundle), "n_nodes": graph.n_nodes, "inference_seconds": seconds,
               "metrics": report.aggregate}
    (out / "metrics.json").write_text(json.dumps(summary, indent=1))
    print(report.table())
    print(f"inference time {seconds * 1e3:.1f} ms for {graph.n_nodes} nodes")
    return 0


def cmd_eval(args) -> int:
    from .evaluate import evaluate_checkpoint
    from .synthflow import load_split

    report = evaluate_checkpoint(args.ckpt, load_split(args.data, args.split), args.coverage)
    print(report.table())
    if args.report:
        report.to_json(args.report)
    return 0


def cmd_coverage_study(args) -> int:
    from .evaluate import coverage_study, coverage_table, evaluate_checkpoint
    from .synthflow import load_split

    paths = load_split(args.data, args.split)
    reports = {}
    for item in args.ckpts:
        frac, ckpt = item.split("=", 1)
        reports[float(frac)] = evaluate_checkpoint(ckpt, paths, float(frac))
    changes = coverage_study(reports)
    print(coverage_table(changes))
    if args.report:
        Path(args.report).write_text(json.dumps(
            {"changes_percent": {str(k): v for k, v in changes.items()},
             "reports": {str(k): r.to_dict() for k, r in reports.items()}}, indent=1))
    return 0


def cmd_grad_check(args) -> int:
    from .diffcore import primitive_suite
    from .gradcheck import model_grad_check

    reports = primitive_suite(args.seed) + [model_grad_check(args.seed)]
    ok = True
    for r in reports:
        passed = r.worst < args.tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {r.op:<22} max rel err {r.worst:.3e}")
    return 0 if ok else 1


def cmd_export(args) -> int:
    from .evaluate import export_fields
    from .graphstore import load_bundle

    graph, _ = load_bundle(args.bundle)
    pred_path = Path(args.pred)
    if pred_path.is_dir():
        pred_path = pred_path / "pred.f32"
    pred = np.fromfile(pred_path, dtype="<f4").reshape(graph.n_nodes, 3)
    out = args.out or str(pred_path.with_suffix("." + args.format))
    export_fields(graph, pred, out, args.format)
    print(f"wrote {out}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frgt", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic potential-flow dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-cases", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--split-frac", default="train=0.8,val=0.1,test=0.1")
    g.add_argument("--n-theta", type=int, default=64)
    g.add_argument("--n-r", type=int, default=12)
    g.add_argument("--outer-radius", type=float, default=1.0)
    g.add_argument("--growth", type=float, default=1.2)
    g.add_argument("--cylinder-fraction", type=float, default=0.3)
    g.add_argument("--alpha-eval", type=float, default=None, help="half-range in degrees for val/test")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--coverage", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--deterministic", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="predict one bundle")
    i.add_argument("--ckpt", required=True, help="checkpoint or training output directory")
    i.add_argument("--bundle", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="metrics on a dataset split")
    e.add_argument("--ckpt", required=True, help="checkpoint or training output directory")
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--coverage", type=float)
    e.add_argument("--report")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("coverage-study", help="RMSE change vs full coverage")
    c.add_argument("--ckpts", nargs="+", required=True, metavar="FRACTION=CKPT")
    c.add_argument("--data", required=True)
    c.add_argument("--split", default="test")
    c.add_argument("--report")
    c.set_defaults(func=cmd_coverage_study)

    gc = sub.add_parser("grad-check", help="finite-difference gradient suite")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.set_defaults(func=cmd_grad_check)

    x = sub.add_parser("export", help="write fields as VTK or CSV")
    x.add_argument("--bundle", required=True)
    x.add_argument("--pred", required=True)
    x.add_argument("--format", choices=("vtk", "csv"), default="vtk")
    x.add_argument("--out")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # every failure becomes a message and exit 1
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
