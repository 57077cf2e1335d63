"""Overfit benchmark: tiny stacked model on 8 synthetic graphs for 500 epochs."""
import argparse
import json
import logging
from pathlib import Path

import numpy as np

from frgt import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--graphs", type=int, default=8)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", default="results/overfit.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    runs = {}
    for seed in args.seeds:
        res = bench.overfit(args.graphs, args.epochs, seed)
        runs[seed] = res
        print(f"seed {seed}: final train loss {res['final_loss']:.3e} "
              f"(loss after 1 / 10 epochs: {res['losses'][0]:.3e} / {res['losses'][min(9, len(res['losses']) - 1)]:.3e}) "
              f"in {res['seconds']:.0f}s")
    finals = [r["final_loss"] for r in runs.values()]
    if len(finals) > 1:
        print(f"final train loss {np.mean(finals):.3e} +- {np.std(finals, ddof=1):.1e} over {len(finals)} seeds")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(bench.jsonable(runs), indent=1))


if __name__ == "__main__":
    main()
