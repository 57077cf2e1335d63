"""Partial-coverage study: one model per sensed fraction, RMSE change vs full coverage."""
import argparse
import json
import logging
from pathlib import Path

from frgt import bench
from frgt.evaluate import coverage_table
from frgt.synthflow import GridSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="results/bench_data")
    ap.add_argument("--fractions", type=float, nargs="+", default=[1.0, 0.6, 0.2])
    ap.add_argument("--train", type=int, default=200)
    ap.add_argument("--test", type=int, default=40)
    ap.add_argument("--epochs", type=int, default=bench.BenchSpec.epochs)
    ap.add_argument("--n-theta", type=int, default=48)
    ap.add_argument("--n-r", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/coverage")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    spec = bench.BenchSpec(n_train=args.train, n_test=args.test, epochs=args.epochs, seed=args.seed,
                           grid=GridSpec(args.n_theta, args.n_r))
    data = bench.ensure_dataset(spec, args.data)
    res = bench.coverage_trend(spec, data, tuple(args.fractions))
    text = coverage_table(res["changes"])
    mono = bench.nondecreasing(res["changes"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text(f"# Coverage study\n\n```\n{text}\n```\n\nnondecreasing p/ux/uy: {mono}\n")
    (out / "runs.json").write_text(json.dumps(bench.jsonable(res), indent=1))
    print(text)
    print("nondecreasing p/ux/uy:", mono)


if __name__ == "__main__":
    main()
