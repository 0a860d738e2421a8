"""Triple-file ingestion, vocabularies, incidence indexes and negative sampling.

Every training triple ``(h, r, t)`` yields two graph edges: ``(h, r, t)`` with
edge id ``i`` and its inverse ``(t, r + R, h)`` with edge id ``i + T``, where
``R`` is the number of base relations and ``T`` the number of training
triples. Head queries ``(?, r, t)`` are answered as tail queries
``(t, r + R, ?)``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "valid", "test")
CATEGORIES = ("1-1", "1-N", "N-1", "N-N")


class DatasetError(Exception):
    """Unreadable or inconsistent dataset."""


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


@dataclass(eq=False)
class KnowledgeGraph:
    entities: list[str]
    relations: list[str]  # base relations only; inverse of r has id r + len(relations)
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    name: str = ""
    source: str | None = None
    _true_tails: dict = field(default=None, repr=False)
    _incident: tuple = field(default=None, repr=False)

    def __post_init__(self):
        for split in SPLITS:
            arr = np.asarray(getattr(self, split), dtype=np.int64).reshape(-1, 3)
            if arr.size:
                if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= len(self.entities):
                    raise DatasetError(f"{split}: entity id out of range")
                if arr[:, 1].min() < 0 or arr[:, 1].max() >= len(self.relations):
                    raise DatasetError(f"{split}: relation id out of range")
            setattr(self, split, arr)
        h, r, t = self.train.T
        base = len(self.relations)
        self.edges = np.concatenate(
            [self.train, np.stack([t, r + base, h], axis=1)]).astype(np.int64)

    # ------------------------------------------------------------ sizes

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_base_relations(self) -> int:
        return len(self.relations)

    @property
    def num_relations(self) -> int:
        return 2 * len(self.relations)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def inverse(self, rel: int) -> int:
        base = self.num_base_relations
        return rel + base if rel < base else rel - base

    def relation_name(self, rel: int) -> str:
        base = self.num_base_relations
        return self.relations[rel] if rel < base else self.relations[rel - base] + "^-1"

    def edge_ids_of_triples(self, idx) -> np.ndarray:
        """Both edge ids (forward, inverse) for training-triple indices ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        return np.concatenate([idx, idx + len(self.train)])

    # ------------------------------------------------------------ indexes

    def _build_incidence(self):
        # CSR over entities: every edge appears under both of its endpoints
        ends = np.concatenate([self.edges[:, 0], self.edges[:, 2]])
        eids = np.concatenate([np.arange(self.num_edges)] * 2)
        # self-loops would otherwise list the edge twice
        keep = np.ones(len(ends), dtype=bool)
        loops = self.edges[:, 0] == self.edges[:, 2]
        keep[self.num_edges:][loops] = False
        ends, eids = ends[keep], eids[keep]
        order = np.lexsort((eids, ends))
        indptr = np.zeros(self.num_entities + 1, dtype=np.int64)
        np.add.at(indptr, ends + 1, 1)
        self._incident = (np.cumsum(indptr), eids[order])

    def incident_edges(self, v: int) -> np.ndarray:
        """Edge ids with ``v`` as an endpoint, ascending."""
        if self._incident is None:
            self._build_incidence()
        indptr, idx = self._incident
        return idx[indptr[v]:indptr[v + 1]]

    def edge_neighbors(self, e: int) -> np.ndarray:
        """Untruncated line-graph neighbourhood N(e), ascending."""
        h, _, t = self.edges[e]
        nb = np.union1d(self.incident_edges(h), self.incident_edges(t))
        return nb[nb != e]

    @property
    def isolated(self) -> np.ndarray:
        deg = np.bincount(self.edges[:, [0, 2]].ravel(), minlength=self.num_entities)
        return np.flatnonzero(deg == 0)

    @property
    def all_true(self) -> set[tuple[int, int, int]]:
        return {tuple(map(int, x)) for s in SPLITS for x in getattr(self, s)}

    @property
    def true_tails(self) -> dict[tuple[int, int], np.ndarray]:
        """(head, relation incl. inverses) -> sorted true tails over all splits."""
        if self._true_tails is None:
            allt = np.concatenate([getattr(self, s) for s in SPLITS])
            base = self.num_base_relations
            aug = np.concatenate([allt, np.stack(
                [allt[:, 2], allt[:, 1] + base, allt[:, 0]], axis=1)])
            aug = np.unique(aug, axis=0)
            table: dict[tuple[int, int], list] = {}
            for h, r, t in aug.tolist():
                table.setdefault((h, r), []).append(t)
            self._true_tails = {k: np.array(v, dtype=np.int64) for k, v in table.items()}
        return self._true_tails

    def vocab_hash(self) -> str:
        m = hashlib.sha256()
        m.update("\n".join(self.entities).encode())
        m.update(b"\x00")
        m.update("\n".join(self.relations).encode())
        return m.hexdigest()

    def queries(self, split: str) -> np.ndarray:
        """(head, relation, target) rows for tail then head prediction of a split."""
        arr = getattr(self, split)
        inv = np.stack([arr[:, 2], arr[:, 1] + self.num_base_relations, arr[:, 0]], axis=1)
        return np.concatenate([arr, inv]).reshape(-1, 3)


# ---------------------------------------------------------------- loading

def _read_split(path: Path) -> list[tuple[str, str, str]]:
    if not path.is_file():
        raise DatasetError(f"missing dataset file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise DatasetError(f"{path.name}: malformed line {lineno}: {line!r}")
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def load_dataset(path) -> KnowledgeGraph:
    path = Path(path)
    raw = {s: _read_split(path / f"{s}.txt") for s in SPLITS}
    entities = sorted({x for rows in raw.values() for h, _, t in rows for x in (h, t)})
    relations = sorted({r for rows in raw.values() for _, r, _ in rows})
    seen = {x for h, _, t in raw["train"] for x in (h, t)}
    for s in ("valid", "test"):
        for lineno, (h, _, t) in enumerate(raw[s], 1):
            for x in (h, t):
                if x not in seen:
                    raise DatasetError(
                        f"{s}.txt: entity {x!r} (triple {lineno}) does not occur in train.txt;"
                        " only the transductive setting is supported")
    eid = {x: i for i, x in enumerate(entities)}
    rid = {x: i for i, x in enumerate(relations)}

    def encode(rows):
        return np.array([(eid[h], rid[r], eid[t]) for h, r, t in rows], dtype=np.int64).reshape(-1, 3)

    kg = KnowledgeGraph(entities, relations, *(encode(raw[s]) for s in SPLITS), name=path.name)
    kg.source = str(path.resolve())
    return kg


def write_dataset(kg: KnowledgeGraph, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for s in SPLITS:
        with open(path / f"{s}.txt", "w", encoding="utf-8") as fh:
            for h, r, t in getattr(kg, s).tolist():
                fh.write(f"{kg.entities[h]}\t{kg.relations[r]}\t{kg.entities[t]}\n")


def write_vocab(kg: KnowledgeGraph, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "entity2id.tsv", "w", encoding="utf-8") as fh:
        fh.writelines(f"{x}\t{i}\n" for i, x in enumerate(kg.entities))
    with open(path / "relation2id.tsv", "w", encoding="utf-8") as fh:
        fh.writelines(f"{kg.relation_name(i)}\t{i}\n" for i in range(kg.num_relations))


# ---------------------------------------------------------------- neighbourhoods

def build_edge_neighbors(kg: KnowledgeGraph, max_neighbors: int = 64, seed: int = 0) -> np.ndarray:
    """Padded ``(num_edges, width)`` array of neighbour edge ids, ``-1`` padded.

    Lists longer than ``max_neighbors`` are replaced by a uniform sample
    without replacement. Each row is ascending.
    """
    if max_neighbors < 1:
        raise ValueError("max_neighbors must be >= 1")
    rng = np.random.default_rng(seed)
    rows = []
    for e in range(kg.num_edges):
        nb = kg.edge_neighbors(e)
        if len(nb) > max_neighbors:
            nb = np.sort(rng.choice(nb, size=max_neighbors, replace=False))
        rows.append(nb)
    width = max((len(r) for r in rows), default=0)
    out = np.full((kg.num_edges, max(width, 1)), -1, dtype=np.int64)
    for e, nb in enumerate(rows):
        out[e, :len(nb)] = nb
    return out


# ---------------------------------------------------------------- negatives

@dataclass
class NegativeBatch:
    positives: np.ndarray  # (P, 3)
    corrupted: np.ndarray  # (P, n, 3)
    direction: str


def corrupt_entities(keep: np.ndarray, n: int, num_entities: int, rng) -> np.ndarray:
    """``(len(keep), n)`` entity ids drawn uniformly from all entities except ``keep[i]``."""
    if num_entities < 2:
        raise DatasetError("cannot corrupt a triple in a graph with a single entity")
    draw = rng.integers(0, num_entities - 1, size=(len(keep), n))
    # shifting past the excluded id is the same law as resampling on collision
    return draw + (draw >= np.asarray(keep)[:, None])


def edge_keys(edges: np.ndarray, num_relations: int, num_entities: int) -> np.ndarray:
    """Sorted int64 codes of ``(h, r, t)`` rows for membership tests."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
    return np.unique((e[:, 0] * num_relations + e[:, 1]) * num_entities + e[:, 2])


def corrupt_entities_filtered(queries: np.ndarray, n: int, num_entities: int, num_relations: int,
                              known: np.ndarray, rng, max_rounds: int = 50) -> np.ndarray:
    """Tail corruptions of ``(h, r, t)`` rows that avoid every triple coded in ``known``.

    Draws are uniform over the entities that do not complete a known triple.
    Rows whose every alternative is known fall back to :func:`corrupt_entities`.
    """
    q = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    prefix = (q[:, 0] * num_relations + q[:, 1]) * num_entities

    def is_known(ents, rows):
        code = prefix[rows, None] + ents
        pos = np.minimum(np.searchsorted(known, code), len(known) - 1)
        return known[pos] == code if len(known) else np.zeros(code.shape, dtype=bool)

    out = corrupt_entities(q[:, 2], n, num_entities, rng)
    rows = np.arange(len(q))
    bad = is_known(out, rows)
    for _ in range(max_rounds):
        if not bad.any():
            return out
        r, c = np.nonzero(bad)
        out[r, c] = corrupt_entities(q[r, 2], 1, num_entities, rng)[:, 0]
        bad[r, c] = is_known(out[r, c][:, None], r)[:, 0]
    # few admissible entities left: draw from the explicit complement
    for i in np.unique(np.nonzero(bad)[0]):
        ents = np.arange(num_entities)
        ok = ents[~is_known(ents[None, :], np.array([i]))[0] & (ents != q[i, 2])]
        if len(ok):
            out[i, bad[i]] = rng.choice(ok, size=int(bad[i].sum()))
    return out


def sample_negatives(kg: KnowledgeGraph, positives, n: int, direction: str = "tail",
                     seed: int = 0) -> NegativeBatch:
    if n < 1:
        raise ValueError("n must be >= 1")
    if direction not in ("head", "tail"):
        raise ValueError(f"direction must be 'head' or 'tail', got {direction!r}")
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    slot = 2 if direction == "tail" else 0
    rng = np.random.default_rng(seed)
    ents = corrupt_entities(pos[:, slot], n, kg.num_entities, rng)
    out = np.repeat(pos[:, None, :], n, axis=1)
    out[:, :, slot] = ents
    return NegativeBatch(pos, out, direction)


# ---------------------------------------------------------------- categories

def categorize_relations(kg: KnowledgeGraph, threshold: float = 1.5) -> dict[int, str]:
    """1-1 / 1-N / N-1 / N-N label per base relation from training cardinalities."""
    out = {}
    allt = np.concatenate([getattr(kg, s) for s in SPLITS])
    for r in range(kg.num_base_relations):
        rows = kg.train[kg.train[:, 1] == r]
        if not len(rows):
            rows = allt[allt[:, 1] == r]
        if not len(rows):
            out[r] = "1-1"
            continue
        rows = np.unique(rows, axis=0)
        heads_per_tail = len(rows) / len(np.unique(rows[:, 2]))
        tails_per_head = len(rows) / len(np.unique(rows[:, 0]))
        lhs = "1" if heads_per_tail < threshold else "N"
        rhs = "1" if tails_per_head < threshold else "N"
        out[r] = f"{lhs}-{rhs}"
    return out


# ---------------------------------------------------------------- subsets and synthetic graphs

def subsample(kg: KnowledgeGraph, num_train: int, seed: int = 0, name: str | None = None) -> KnowledgeGraph:
    """Random ``num_train`` training triples; valid/test keep only triples over the kept entities.

    Vocabularies shrink to the entities and relations still used, so the
    result is a self-contained transductive dataset.
    """
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(kg.train), size=min(num_train, len(kg.train)), replace=False))
    train = kg.train[keep]
    ents = np.unique(train[:, [0, 2]])
    rels = np.unique(train[:, 1])

    def inside(arr):
        ok = np.isin(arr[:, 0], ents) & np.isin(arr[:, 2], ents) & np.isin(arr[:, 1], rels)
        return arr[ok]

    emap = np.full(kg.num_entities, -1, dtype=np.int64)
    emap[ents] = np.arange(len(ents))
    rmap = np.full(kg.num_base_relations, -1, dtype=np.int64)
    rmap[rels] = np.arange(len(rels))

    def recode(arr):
        return np.stack([emap[arr[:, 0]], rmap[arr[:, 1]], emap[arr[:, 2]]], axis=1).reshape(-1, 3)

    return KnowledgeGraph([kg.entities[i] for i in ents], [kg.relations[i] for i in rels],
                          recode(train), recode(inside(kg.valid)), recode(inside(kg.test)),
                          name=name or f"{kg.name}-sub{num_train}")


def random_kg(num_entities: int, num_relations: int, num_train: int, num_valid: int = 0,
              num_test: int = 0, seed: int = 0, skew: float = 1.0, name: str = "random") -> KnowledgeGraph:
    """Synthetic graph with Zipf-like entity and relation frequencies.

    Heads and tails are drawn with probability proportional to
    ``rank ** -skew``; duplicates are dropped and valid/test triples only use
    entities seen in train.
    """
    rng = np.random.default_rng(seed)
    pr = np.arange(1, num_relations + 1, dtype=float) ** -skew
    pr /= pr.sum()
    pe = np.arange(1, num_entities + 1, dtype=float) ** -skew
    pe /= pe.sum()
    seen: set = set()

    def draw(count, p):
        rows = []
        while len(rows) < count:
            n = 2 * (count - len(rows)) + 16
            batch = np.stack([rng.choice(num_entities, n, p=p), rng.choice(num_relations, n, p=pr),
                              rng.choice(num_entities, n, p=p)], axis=1)
            for h, r, t in batch.tolist():
                if h != t and (h, r, t) not in seen:
                    seen.add((h, r, t))
                    rows.append((h, r, t))
                    if len(rows) == count:
                        break
        return np.array(rows, dtype=np.int64).reshape(-1, 3)

    train = draw(num_train, pe)
    # held-out triples only touch entities that occur in train
    used = np.zeros(num_entities)
    used[train[:, [0, 2]].ravel()] = 1.0
    pu = pe * used
    pu /= pu.sum()
    valid = draw(num_valid, pu)
    test = draw(num_test, pu)
    return KnowledgeGraph([f"e{i}" for i in range(num_entities)], [f"r{i}" for i in range(num_relations)],
                          train, valid, test, name=name)
