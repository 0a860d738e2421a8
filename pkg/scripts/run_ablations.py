"""Selector, aggregator, K and depth ablations on one dataset, shared seed.

Each axis is a ``sarmp sweep``; tables land in ``<out>/<axis>/sweep.txt``.

    python scripts/run_ablations.py --data data/umls --out runs/ablations
    python scripts/run_ablations.py --data data/umls --axes selector --epochs 5
"""
import argparse
from pathlib import Path

from sarmp.cli import main as sarmp

AXES = {
    "selector": "semantic_topk,random_k,dot_product_topk",
    "aggregator": "multi_head_attention,mean",
    "k": "1,5,10,20",
    "hops": "1,2,3",
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--axes", default="selector,aggregator", help=f"comma list from {sorted(AXES)}")
    ap.add_argument("--epochs", help="override the default epoch budget")
    ap.add_argument("--seed", default="0")
    args = ap.parse_args()

    extra = ["--seed", args.seed] + (["--epochs", args.epochs] if args.epochs else [])
    for axis in args.axes.split(","):
        if axis not in AXES:
            ap.error(f"unknown axis {axis!r}")
        out = Path(args.out) / axis
        code = sarmp(["sweep", "--data", args.data, "--out", str(out), "--axis", axis,
                      "--values", AXES[axis], *extra])
        if code:
            raise SystemExit(code)


if __name__ == "__main__":
    main()
