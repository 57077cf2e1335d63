"""Generalization benchmark: stacked vs interleaved on potential-flow graphs, one row per seed."""
import argparse
import json
import logging
from pathlib import Path

import numpy as np

from frgt import bench
from frgt.synthflow import GridSpec


def table(runs: dict) -> str:
    """``runs`` maps seed -> variant -> run; per-seed rows plus mean +- std per variant."""
    rows = ["| variant | seed | params | train s | R2 p | R2 ux | R2 uy | RMSE p [Pa] | RMSE ux [m/s] | RMSE uy [m/s] |",
            "|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|"]
    variants = list(next(iter(runs.values())))
    for name in variants:
        vals = []
        for seed, by_variant in runs.items():
            r = by_variant[name]
            a = r["report"].aggregate
            vals.append(a["r2"] + a["rmse"])
            rows.append(f"| {name} | {seed} | {r['params']} | {r['train_seconds']:.0f} | "
                        + " | ".join(f"{v:.4f}" for v in a["r2"]) + " | "
                        + " | ".join(f"{v:.3g}" for v in a["rmse"]) + " |")
        if len(vals) > 1:
            m, s = np.mean(vals, axis=0), np.std(vals, axis=0, ddof=1)
            rows.append(f"| {name} | mean +- std | | | "
                        + " | ".join(f"{a:.4f} +- {b:.4f}" for a, b in zip(m[:3], s[:3])) + " | "
                        + " | ".join(f"{a:.3g} +- {b:.2g}" for a, b in zip(m[3:], s[3:])) + " |")
    return "\n".join(rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="results/bench_data")
    ap.add_argument("--train", type=int, default=200)
    ap.add_argument("--test", type=int, default=40)
    ap.add_argument("--epochs", type=int, default=bench.BenchSpec.epochs)
    ap.add_argument("--n-theta", type=int, default=48)
    ap.add_argument("--n-r", type=int, default=10)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0], help="training seeds; the dataset uses the first")
    ap.add_argument("--out", default="results/generalization")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    grid = GridSpec(args.n_theta, args.n_r)
    data_spec = bench.BenchSpec(n_train=args.train, n_test=args.test, epochs=args.epochs,
                                seed=args.seeds[0], grid=grid)
    data = bench.ensure_dataset(data_spec, args.data)
    runs = {}
    for seed in args.seeds:
        spec = bench.BenchSpec(n_train=args.train, n_test=args.test, epochs=args.epochs, seed=seed, grid=grid)
        runs[seed] = bench.generalization(spec, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = table(runs)
    (out / "report.md").write_text(f"# Generalization ({args.train} train / {args.test} test, "
                                   f"{args.epochs} epochs)\n\n{text}\n")
    (out / "runs.json").write_text(json.dumps(bench.jsonable(runs), indent=1))
    print(text)


if __name__ == "__main__":
    main()
