import os
from pathlib import Path

import numpy as np
import pytest

os.environ.setdefault("SARMP_DEBUG", "1")

from sarmp import tensor  # noqa: E402
from sarmp.data import KnowledgeGraph  # noqa: E402

tensor.DEBUG = True

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"


def numeric_grad(f, x, step=1e-5):
    """Central differences of scalar ``f`` (numpy in, float out) at ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    for i in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] += step
        xm[i] -= step
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * step)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float((np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-12)).max())


def toy_kg(seed=0, num_entities=6, num_relations=3, num_triples=10, valid=2, test=2):
    """Small random transductive KG; every entity appears in train."""
    rng = np.random.default_rng(seed)
    ents = [f"e{i}" for i in range(num_entities)]
    rels = [f"r{i}" for i in range(num_relations)]
    triples = set()
    # a ring guarantees every entity is in train
    for i in range(num_entities):
        triples.add((i, int(rng.integers(num_relations)), (i + 1) % num_entities))
    while len(triples) < num_triples + valid + test:
        h, t = rng.choice(num_entities, 2, replace=False)
        triples.add((int(h), int(rng.integers(num_relations)), int(t)))
    triples = sorted(triples)
    ring = [x for x in triples if x[2] == (x[0] + 1) % num_entities]
    rest = [x for x in triples if x not in ring]
    rng.shuffle(rest)
    rest = [tuple(x) for x in rest]
    n_extra = num_triples - len(ring)
    train = ring + rest[:n_extra]
    return KnowledgeGraph(ents, rels, np.array(train), np.array(rest[n_extra:n_extra + valid]).reshape(-1, 3),
                          np.array(rest[n_extra + valid:n_extra + valid + test]).reshape(-1, 3), name="toy")


@pytest.fixture
def kg6():
    return toy_kg()


def have_dataset(name):
    return (DATA / name / "train.txt").is_file()


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_acceptance(name: str, passed: bool, detail: str = ""):
    """Remember one criterion's outcome and echo it immediately."""
    ACCEPTANCE.append((name, passed, detail))
    print(f"\n{'PASS' if passed else 'FAIL'}  {name}: {detail}", flush=True)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
