"""Parameter accounting for the full-size stacked and interleaved configs."""
import argparse
from pathlib import Path

from frgt.model import FrgtConfig
from frgt.reports import parameter_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/param_count.md")
    args = ap.parse_args()
    text = parameter_report(FrgtConfig(variant="stacked", L=10, T=1, d=160)) + "\n" + \
        parameter_report(FrgtConfig(variant="interleaved", C=5, d=160))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(text)


if __name__ == "__main__":
    main()
