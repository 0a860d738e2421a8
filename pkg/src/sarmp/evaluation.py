"""Filtered ranking protocol: MRR, Hits@N, per-direction and per-category slices."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .data import CATEGORIES, KnowledgeGraph, categorize_relations
from .model import MessageGraph, ModelParams, propagate, score_all

HITS = (1, 3, 10)


# ---------------------------------------------------------------- ranks

def filtered_rank(scores, target: int, filtered=()) -> float:
    """Rank of ``target`` after removing the ``filtered`` candidates.

    Ties count half: ``1 + #greater + #tied_others / 2``.
    """
    scores = np.asarray(scores, dtype=float)
    keep = np.ones(len(scores), dtype=bool)
    keep[np.asarray(list(filtered), dtype=np.int64)] = False
    keep[target] = True
    s = scores[target]
    greater = np.count_nonzero(keep & (scores > s))
    ties = np.count_nonzero(keep & (scores == s)) - 1
    return 1.0 + greater + ties / 2.0


def raw_rank(scores, target: int) -> float:
    return filtered_rank(scores, target, ())


def round_rank(rank: float) -> int:
    """Integer rank for display; halves round up."""
    return int(np.floor(rank + 0.5))


def _batch_filtered_ranks(scores: np.ndarray, targets: np.ndarray, filtered: list) -> np.ndarray:
    Q = len(targets)
    drop = np.zeros(scores.shape, dtype=bool)
    for i, f in enumerate(filtered):
        if f is not None and len(f):
            drop[i, f] = True
    drop[np.arange(Q), targets] = False
    ts = scores[np.arange(Q), targets][:, None]
    greater = np.count_nonzero(~drop & (scores > ts), axis=1)
    ties = np.count_nonzero(~drop & (scores == ts), axis=1) - 1
    return 1.0 + greater + ties / 2.0


# ---------------------------------------------------------------- report

@dataclass
class RankingReport:
    queries: np.ndarray  # (Q, 3): head, relation (inverse ids for head prediction), target
    ranks: np.ndarray  # unrounded filtered ranks
    num_base_relations: int
    categories: dict = field(default_factory=dict)
    split: str = ""

    @property
    def directions(self) -> np.ndarray:
        return np.where(self.queries[:, 1] < self.num_base_relations, "tail", "head")

    @staticmethod
    def _metrics(ranks: np.ndarray) -> dict:
        if len(ranks) == 0:
            return {"mrr": float("nan"), **{f"hits@{n}": float("nan") for n in HITS}, "count": 0}
        out = {"mrr": float(np.mean(1.0 / ranks))}
        for n in HITS:
            out[f"hits@{n}"] = float(np.mean(ranks <= n))
        out["count"] = int(len(ranks))
        return out

    def summary(self) -> dict:
        return self._metrics(self.ranks)

    @property
    def mrr(self) -> float:
        return self.summary()["mrr"]

    def hits(self, n: int) -> float:
        return float(np.mean(self.ranks <= n))

    def per_direction(self) -> dict:
        d = self.directions
        return {k: self._metrics(self.ranks[d == k]) for k in ("head", "tail")}

    def per_category(self) -> dict:
        """``{direction: {category: metrics}}`` laid out like a head/tail x 1-1..N-N table."""
        d = self.directions
        base = self.queries[:, 1] % self.num_base_relations
        cats = np.array([self.categories.get(int(r), "") for r in base])
        return {k: {c: self._metrics(self.ranks[(d == k) & (cats == c)]) for c in CATEGORIES}
                for k in ("head", "tail")}

    def to_dict(self) -> dict:
        summ = self.summary()
        return {
            "split": self.split,
            "summary": summ,
            "summary_percent": {k: 100 * v for k, v in summ.items() if k.startswith("hits")},
            "per_direction": self.per_direction(),
            "per_category": self.per_category(),
            "queries": [{"head": int(h), "relation": int(r), "target": int(t),
                         "rank": float(x), "rank_int": round_rank(x)}
                        for (h, r, t), x in zip(self.queries.tolist(), self.ranks.tolist())],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_text(self) -> str:
        s = self.summary()
        lines = [f"split: {self.split}   queries: {s['count']}",
                 f"{'':<8}{'MRR':>8}{'H@1':>8}{'H@3':>8}{'H@10':>8}"]

        def row(name, m):
            return (f"{name:<8}{m['mrr']:>8.4f}" + "".join(
                f"{100 * m[f'hits@{n}']:>8.1f}" for n in HITS))

        lines.append(row("all", s))
        for k, m in self.per_direction().items():
            lines.append(row(k, m))
        lines.append("")
        lines.append(f"{'MRR by category':<16}" + "".join(f"{c:>8}" for c in CATEGORIES))
        for k, cats in self.per_category().items():
            label = "Head Pred" if k == "head" else "Tail Pred"
            lines.append(f"{label:<16}" + "".join(
                f"{'-':>8}" if not cats[c]["count"] else f"{cats[c]['mrr']:>8.3f}" for c in CATEGORIES))
        return "\n".join(lines)


# ---------------------------------------------------------------- protocol

def rank_query(graph: MessageGraph, params: ModelParams, query, target: int,
               scores: np.ndarray | None = None) -> float:
    """Filtered rank of ``target`` for the query ``(h, r, ?)``.

    The query triple is masked from the graph before messages are computed.
    Pass ``scores`` (one per entity) to rank precomputed scores instead.
    """
    h, r = int(query[0]), int(query[1])
    kg = graph.kg
    if scores is None:
        active = graph.mask_for([(h, r, target)])
        nodes = propagate(params, graph, active)
        scores = score_all(params, nodes, [h], [r])[0]
    return filtered_rank(scores, target, kg.true_tails.get((h, r), ()))


def evaluate(graph: MessageGraph, params: ModelParams, split: str = "test",
             chunk: int = 256, score_fn=None) -> RankingReport:
    """Rank both directions of every triple in ``split``.

    Valid/test triples are not graph edges, so one propagation serves all of
    them. For the training split each chunk of queries has its own triples
    masked. ``score_fn(heads, rels) -> (B, N)`` replaces the model when given.
    """
    kg = graph.kg
    queries = kg.queries(split)
    if len(queries) == 0:
        raise ValueError(f"split {split!r} is empty")
    nodes = None
    if score_fn is None and split != "train":
        nodes = propagate(params, graph)
    ranks = np.empty(len(queries))
    for lo in range(0, len(queries), chunk):
        q = queries[lo:lo + chunk]
        if score_fn is not None:
            scores = np.asarray(score_fn(q[:, 0], q[:, 1]), dtype=float)
        else:
            n = nodes
            if n is None:
                n = propagate(params, graph, graph.mask_for(q))
            scores = score_all(params, n, q[:, 0], q[:, 1])
        filt = [kg.true_tails.get((h, r)) for h, r in q[:, :2].tolist()]
        ranks[lo:lo + chunk] = _batch_filtered_ranks(scores, q[:, 2], filt)
    return RankingReport(queries, ranks, kg.num_base_relations, categorize_relations(kg), split)


# ---------------------------------------------------------------- sweeps

SWEEP_AXES = {"k": ("k", int), "hops": ("hops", int), "aggregator": ("aggregator", str),
              "selector": ("selector", str)}


def parse_axis(axis: str):
    key = axis.strip().lower()
    if key not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    return SWEEP_AXES[key]


def sweep(kg: KnowledgeGraph, hyper, config, axis: str, values, split: str = "test",
          out_dir=None, echo: bool = False) -> list[dict]:
    """Train and evaluate one model per value of ``axis``; all share the seed."""
    from pathlib import Path

    from .training import train

    field_name, conv = parse_axis(axis)
    values = [conv(v) for v in values]
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for v in values:
        hp = copy.deepcopy(hyper)
        setattr(hp, field_name, v)
        hp.validate()
        sub = None if out_dir is None else Path(out_dir) / f"{field_name}={v}"
        state = train(kg, hp, copy.deepcopy(config), out_dir=sub, echo=echo)
        graph = MessageGraph(kg, hp.max_neighbors, config.seed)
        report = evaluate(graph, state.best_params, split)
        rows.append({"axis": field_name, "value": v, "report": report, **report.summary(),
                     "best_epoch": state.best_epoch})
    best = max(range(len(rows)), key=lambda i: rows[i]["mrr"])
    for i, r in enumerate(rows):
        r["best"] = i == best
    return rows


def sweep_table(rows: list[dict]) -> str:
    if not rows:
        return ""
    name = rows[0]["axis"]
    width = max(len(name), *(len(str(r["value"])) for r in rows)) + 2
    lines = [f"{name:<{width}}{'MRR':>8}{'H@1':>8}{'H@3':>8}{'H@10':>8}"]
    for r in rows:
        lines.append(f"{str(r['value']):<{width}}{r['mrr']:>8.4f}" + "".join(
            f"{100 * r[f'hits@{n}']:>8.1f}" for n in HITS) + ("  *" if r["best"] else ""))
    return "\n".join(lines)


def sweep_json(rows: list[dict]) -> list[dict]:
    return [{k: v for k, v in r.items() if k != "report"} for r in rows]
