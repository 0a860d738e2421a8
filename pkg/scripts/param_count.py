"""Parameter count of the default model, and its independence from entity count.

    python scripts/param_count.py [--relations 237] [--entities 14541]
"""
import argparse

import numpy as np

from sarmp.data import KnowledgeGraph
from sarmp.model import HyperParams, init_params, param_shapes


def synthetic_kg(num_entities, num_relations, seed=0):
    rng = np.random.default_rng(seed)
    n = max(num_entities, num_relations)
    triples = np.stack([rng.integers(0, num_entities, n), np.arange(n) % num_relations,
                        rng.integers(0, num_entities, n)], axis=1)
    return KnowledgeGraph([f"e{i}" for i in range(num_entities)],
                          [f"r{i}" for i in range(num_relations)],
                          triples, np.zeros((0, 3)), np.zeros((0, 3)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--relations", type=int, default=237, help="base relations (inverses are added)")
    ap.add_argument("--entities", type=int, default=14541)
    args = ap.parse_args()

    hyper = HyperParams()
    counts = {}
    for n in (args.entities, 10 * args.entities):
        kg = synthetic_kg(n, args.relations)
        counts[n] = init_params(kg.num_relations, hyper).count()
    print(f"defaults: {hyper}")
    for name, shape in param_shapes(2 * args.relations, hyper).items():
        print(f"  {name:<16}{str(shape):>12}{int(np.prod(shape)):>10}")
    for n, c in counts.items():
        print(f"entities={n:<8} relations={2 * args.relations} (with inverses)  parameters={c}")
    same = len(set(counts.values())) == 1
    print("entity-count independent:", same)
    return 0 if same else 1


if __name__ == "__main__":
    raise SystemExit(main())
