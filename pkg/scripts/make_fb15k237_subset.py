"""Write a 10k-triple FB15k-237 subset for the smoke test.

Uses ``data/fb15k-237`` when present, otherwise a synthetic graph with the
same relation count and a skewed degree distribution.

    python scripts/make_fb15k237_subset.py [--n 10000] [--out data/fb15k-237-10k]
"""
import argparse
from pathlib import Path

from sarmp.data import DatasetError, load_dataset, random_kg, subsample, write_dataset

ROOT = Path(__file__).resolve().parents[1]


def build(n: int = 10_000, seed: int = 0, source=ROOT / "data" / "fb15k-237"):
    try:
        return subsample(load_dataset(source), n, seed, name="fb15k-237-sub"), "fb15k-237"
    except DatasetError:
        kg = random_kg(14541, 237, n, num_valid=500, num_test=500, seed=seed, skew=0.8,
                       name="fb15k-237-shaped")
        return kg, "synthetic"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=str(ROOT / "data" / "fb15k-237-10k"))
    args = ap.parse_args()
    kg, origin = build(args.n, args.seed)
    write_dataset(kg, args.out)
    print(f"{origin}: {kg.num_entities} entities, {kg.num_base_relations} relations, "
          f"{len(kg.train)}/{len(kg.valid)}/{len(kg.test)} -> {args.out}")


if __name__ == "__main__":
    main()
