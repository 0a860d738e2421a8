"""Edge-centric relational message passing with semantic Top-K neighbour selection.

One round of message passing, for edge states ``S`` (one row per edge):

1. every edge picks at most ``k`` neighbour edges (edges sharing an endpoint)
   by similarity ``exp(-||f(s_e) - f(s_n)||^2 / tau)`` of projected states;
2. the picked states are averaged and fused with the edge's own state by the
   aggregator (two-token multi-head attention by default);
3. each node message is the mean of the fused states of its edges;
4. each edge gets a message ``MLP([h_head, h_tail])`` and a new state
   ``relu(Linear([s_e, m_e]))``.

Node messages after the last round feed the triple scorer.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from . import tensor as T
from .data import KnowledgeGraph, build_edge_neighbors, edge_keys
from .tensor import Tensor

AGGREGATORS = ("multi_head_attention", "mean", "concat_mlp")
SELECTORS = ("semantic_topk", "random_k", "dot_product_topk")
SCORERS = ("query_mlp", "linear")


@dataclass
class HyperParams:
    k: int = 10
    tau: float = 1.0
    hops: int = 2
    dim: int = 64
    proj_dim: int = 64
    heads: int = 4
    aggregator: str = "multi_head_attention"
    selector: str = "semantic_topk"
    scorer: str = "query_mlp"
    max_neighbors: int = 64
    edge_msg_bias: bool = True
    node_norm: bool = True

    def validate(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.hops < 1:
            raise ValueError(f"hops must be >= 1, got {self.hops}")
        if self.dim < 1 or self.proj_dim < 1 or self.heads < 1 or self.max_neighbors < 1:
            raise ValueError("dim, proj_dim, heads and max_neighbors must be >= 1")
        if self.dim % self.heads:
            raise ValueError(f"dim ({self.dim}) must be divisible by heads ({self.heads})")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}; choose from {AGGREGATORS}")
        if self.selector not in SELECTORS:
            raise ValueError(f"unknown selector {self.selector!r}; choose from {SELECTORS}")
        if self.scorer not in SCORERS:
            raise ValueError(f"unknown scorer {self.scorer!r}; choose from {SCORERS}")
        return self

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- parameters

class ModelParams:
    """Ordered collection of named parameter tensors.

    No tensor has a dimension tied to the number of entities.
    """

    def __init__(self, tensors: dict[str, Tensor], num_relations: int, hyper: HyperParams):
        self.tensors = dict(tensors)
        self.num_relations = num_relations
        self.hyper = hyper

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    def items(self):
        return self.tensors.items()

    def count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.items()},
                           self.num_relations, self.hyper)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}


def param_shapes(num_relations: int, hyper: HyperParams) -> dict[str, tuple[int, ...]]:
    d, p = hyper.dim, hyper.proj_dim
    shapes = {
        "relation_embed": (num_relations, d),
        "proj.w": (d, p),
        "proj.b": (p,),
    }
    if hyper.aggregator == "multi_head_attention":
        for n in ("q", "k", "v", "o"):
            shapes[f"attn.w{n}"] = (d, d)
            shapes[f"attn.b{n}"] = (d,)
    elif hyper.aggregator == "concat_mlp":
        shapes.update({"agg.w1": (2 * d, d), "agg.b1": (d,), "agg.w2": (d, d), "agg.b2": (d,)})
    shapes.update({"edge_msg.w1": (2 * d, d), "edge_msg.w2": (d, d)})
    if hyper.edge_msg_bias:
        shapes.update({"edge_msg.b1": (d,), "edge_msg.b2": (d,)})
    shapes.update({"edge_update.w": (2 * d, d), "edge_update.b": (d,),
                   "score.w": (3 * d,), "score.b": (1,)})
    if hyper.scorer == "query_mlp":
        shapes.update({"query.w1": (2 * d, d), "query.b1": (d,),
                       "query.w2": (d, d), "query.b2": (d,)})
    return shapes


def init_params(num_relations: int, hyper: HyperParams, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    hyper.validate()
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in param_shapes(num_relations, hyper).items():
        if len(shape) == 2:
            lim = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-lim, lim, size=shape)
        elif name == "score.w":
            lim = np.sqrt(6.0 / (shape[0] + 1))
            arr = rng.uniform(-lim, lim, size=shape)
        else:
            arr = np.zeros(shape)
        out[name] = Tensor(arr, requires_grad=True, name=name)
    return ModelParams(out, num_relations, hyper)


# ---------------------------------------------------------------- graph view

class MessageGraph:
    """Arrays the propagation needs, derived once from a knowledge graph."""

    def __init__(self, kg: KnowledgeGraph, max_neighbors: int = 64, seed: int = 0):
        self.kg = kg
        self.num_entities = kg.num_entities
        self.edges = kg.edges
        self.neighbors = build_edge_neighbors(kg, max_neighbors, seed)
        self._lookup = None
        self._train_keys = None

    @property
    def train_keys(self) -> np.ndarray:
        """Sorted codes of the training edges, inverses included."""
        if self._train_keys is None:
            self._train_keys = edge_keys(self.edges, self.kg.num_relations, self.num_entities)
        return self._train_keys

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_ids(self, head: int, rel: int, tail: int) -> list[int]:
        """Edge ids of triple ``(head, rel, tail)`` and of its inverse, if present."""
        if self._lookup is None:
            self._lookup = {}
            for i, (h, r, t) in enumerate(self.edges.tolist()):
                self._lookup.setdefault((h, r, t), []).append(i)
        inv = self.kg.inverse(rel)
        return self._lookup.get((head, rel, tail), []) + self._lookup.get((tail, inv, head), [])

    def mask_for(self, triples: Iterable) -> np.ndarray:
        active = np.ones(self.num_edges, dtype=bool)
        for h, r, t in triples:
            active[self.edge_ids(int(h), int(r), int(t))] = False
        return active


# ---------------------------------------------------------------- selection

def _affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def _selection_keys(states: np.ndarray, proj: np.ndarray | None, cand: np.ndarray,
                    rows: np.ndarray, selector: str, rng) -> np.ndarray:
    """Sort keys (smaller = preferred) for candidates ``cand`` of edges ``rows``."""
    if selector == "random_k":
        return rng.random(cand.shape)
    if selector == "dot_product_topk":
        return -np.einsum("cmd,cd->cm", states[cand], states[rows])
    diff = proj[cand] - proj[rows][:, None, :]
    # squared distance orders candidates exactly as the exp(-d/tau) score does
    return np.einsum("cmd,cmd->cm", diff, diff)


def select_neighbors(states: np.ndarray, neighbors: np.ndarray, valid: np.ndarray,
                     hyper: HyperParams, params: ModelParams | None = None, rng=None,
                     backend: str = "compiled") -> tuple[np.ndarray, np.ndarray]:
    """Top-K selection for every edge at once.

    ``neighbors`` is a ``(E, M)`` padded id array with ascending rows and
    ``valid`` marks real, unmasked entries. Returns flat ``(owner, chosen)``
    arrays grouped by owner and ordered by preference within a group; ties
    resolve to the smaller edge id. ``backend="numpy"`` is a slower reference.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    E, M = neighbors.shape
    k = min(hyper.k, M)
    proj = None
    if hyper.selector == "semantic_topk":
        proj = _affine(states, params["proj.w"].data, params["proj.b"].data)
    if hyper.selector != "random_k" and backend == "compiled":
        from ._kernels import topk_by_key

        x = proj if proj is not None else states
        mode = 0 if proj is not None else 1
        ids = np.empty((E, k), dtype=np.int64)
        count = np.empty(E, dtype=np.int64)
        topk_by_key(np.ascontiguousarray(x), np.ascontiguousarray(neighbors),
                    np.ascontiguousarray(valid), k, mode, ids, count)
        ok = np.arange(k)[None, :] < count[:, None]
        return np.broadcast_to(np.arange(E)[:, None], ids.shape)[ok], ids[ok]

    owners, chosen = [], []
    chunk = 512
    for lo in range(0, E, chunk):
        rows = np.arange(lo, min(lo + chunk, E))
        cand = np.where(valid[rows], neighbors[rows], 0)
        keys = _selection_keys(states, proj, cand, rows, hyper.selector, rng)
        keys = np.where(valid[rows], keys, np.inf)
        order = np.argsort(keys, axis=1, kind="stable")[:, :k]
        pick = np.take_along_axis(cand, order, axis=1)
        ok = np.take_along_axis(valid[rows], order, axis=1)
        owners.append(np.broadcast_to(rows[:, None], pick.shape)[ok])
        chosen.append(pick[ok])
    return np.concatenate(owners), np.concatenate(chosen)


def select_topk(center_edge: int, neighbor_ids, states, hyper: HyperParams,
                params: ModelParams | None = None, rng=None) -> list[int]:
    """Ordered ids of at most ``k`` preferred neighbours of one edge."""
    states = states.data if isinstance(states, Tensor) else np.asarray(states, dtype=float)
    nb = np.unique(np.asarray(list(neighbor_ids), dtype=np.int64))
    if nb.size == 0:
        return []
    nb = nb[nb != center_edge]
    # a one-row problem with the center placed first
    if nb.size == 0:
        return []
    ids = np.concatenate([[center_edge], nb])
    neighbors = np.arange(1, len(ids))[None, :]
    _, picked = select_neighbors(states[ids], neighbors, np.ones(neighbors.shape, dtype=bool),
                                 hyper, params, rng)
    return ids[picked].tolist()


def semantic_score(s_center, s_neighbor, proj_w, proj_b, tau: float) -> Tensor:
    """``exp(-||f(a) - f(b)||^2 / tau)`` with ``f(x) = x W + b``."""
    a = T.reshape(T.as_tensor(s_center), (1, -1))
    b = T.reshape(T.as_tensor(s_neighbor), (1, -1))
    w, bias = T.as_tensor(proj_w), T.as_tensor(proj_b)
    fa = T.add(T.matmul(a, w), bias)
    fb = T.add(T.matmul(b, w), bias)
    return T.reshape(T.exp(T.scale(T.neg_sq_dist(fa, fb), 1.0 / tau)), ())


# ---------------------------------------------------------------- per-step pieces

def aggregate_neighbors(states: Tensor, owners, chosen, num_edges: int) -> Tensor:
    """Mean of the selected neighbour states per owner edge (zero if none)."""
    return T.gather_mean(states, chosen, owners, num_edges)


def _linear(x: Tensor, params: ModelParams, w: str, b: str | None) -> Tensor:
    y = T.matmul(x, params[w])
    return T.add(y, params[b]) if b is not None and b in params else y


def attention_aggregate(center: Tensor, nbhd: Tensor, params: ModelParams,
                        hyper: HyperParams, return_weights: bool = False):
    """Fuse each edge state with its neighbourhood mean.

    ``multi_head_attention`` treats (center, nbhd) as a two-token sequence:
    queries come from the center, keys and values from both tokens, heads are
    concatenated, projected, added to the center and passed through ReLU.
    """
    agg = hyper.aggregator
    if agg == "mean":
        out = T.scale(T.add(center, nbhd), 0.5)
        return (out, None) if return_weights else out
    if agg == "concat_mlp":
        hid = T.relu(_linear(T.concat([center, nbhd], axis=1), params, "agg.w1", "agg.b1"))
        out = _linear(hid, params, "agg.w2", "agg.b2")
        return (out, None) if return_weights else out

    n, d = center.shape
    h = hyper.heads
    dh = d // h

    def heads_of(x, which):
        return T.reshape(_linear(x, params, f"attn.w{which}", f"attn.b{which}"), (n, h, dh))

    q = heads_of(center, "q")
    k_self, k_nb = heads_of(center, "k"), heads_of(nbhd, "k")
    v_self, v_nb = heads_of(center, "v"), heads_of(nbhd, "v")
    inv = 1.0 / np.sqrt(dh)
    logit_self = T.scale(T.sum_axis(T.mul(q, k_self), 2, keepdims=True), inv)
    logit_nb = T.scale(T.sum_axis(T.mul(q, k_nb), 2, keepdims=True), inv)
    weights = T.softmax_axis(T.concat([logit_self, logit_nb], axis=2), axis=2)  # (n, h, 2)
    w_self = T.slice_axis(weights, 2, 0, 1)
    w_nb = T.slice_axis(weights, 2, 1, 2)
    mixed = T.add(T.mul(w_self, v_self), T.mul(w_nb, v_nb))
    merged = _linear(T.reshape(mixed, (n, d)), params, "attn.wo", "attn.bo")
    out = T.relu(T.add(merged, center))
    return (out, weights) if return_weights else out


def update_node(edge_states: Tensor, edge_ids, node_of_edge, num_nodes: int) -> Tensor:
    """Node message = mean of the listed (updated) edge states; zero for isolated nodes."""
    return T.gather_mean(edge_states, edge_ids, node_of_edge, num_nodes)


def edge_message(h_u: Tensor, h_v: Tensor, params: ModelParams) -> Tensor:
    hid = T.relu(_linear(T.concat([h_u, h_v], axis=-1), params, "edge_msg.w1", "edge_msg.b1"))
    return _linear(hid, params, "edge_msg.w2", "edge_msg.b2")


def update_edge_state(s_prev: Tensor, m_edge: Tensor, params: ModelParams) -> Tensor:
    return T.relu(_linear(T.concat([s_prev, m_edge], axis=-1), params,
                          "edge_update.w", "edge_update.b"))


# ---------------------------------------------------------------- propagation

def propagate(params: ModelParams, graph: MessageGraph, active: np.ndarray | None = None,
              rng=None, trace: list | None = None) -> Tensor:
    """Run ``hops`` rounds over ``graph`` and return the ``(num_entities, dim)`` node messages.

    Edges with ``active[e] == False`` are removed from the graph: they are never
    selected as neighbours and never pooled into a node.
    """
    hyper = params.hyper
    E = graph.num_edges
    if active is None:
        active = np.ones(E, dtype=bool)
    if rng is None:
        rng = np.random.default_rng(0)
    heads, rels, tails = graph.edges.T
    nbr = graph.neighbors
    valid = (nbr >= 0) & active[np.maximum(nbr, 0)]
    # each triple reaches both endpoints once: h via (h, r, t), t via (t, r^-1, h)
    pool_edges = np.flatnonzero(active)
    pool_nodes = heads[pool_edges]

    states = T.gather_rows(params["relation_embed"], rels)
    nodes = None
    for layer in range(hyper.hops):
        owners, chosen = select_neighbors(states.data, nbr, valid, hyper, params, rng)
        nbhd = aggregate_neighbors(states, owners, chosen, E)
        enriched = attention_aggregate(states, nbhd, params, hyper)
        nodes = update_node(enriched, pool_edges, pool_nodes, graph.num_entities)
        if hyper.node_norm:
            # per-feature standardization across entities keeps node messages apart
            nodes = T.standardize(nodes, 0)
        if trace is not None:
            trace.append({"states": states, "owners": owners, "chosen": chosen,
                          "nbhd": nbhd, "enriched": enriched, "nodes": nodes})
        if layer == hyper.hops - 1:
            # the final edge update would not reach any node message
            break
        msg = edge_message(T.gather_rows(nodes, heads), T.gather_rows(nodes, tails), params)
        states = update_edge_state(states, msg, params)
    return nodes


def forward(graph: MessageGraph, query, params: ModelParams, rng=None):
    """Node messages for a single ``(h, r, ?)`` query with its own edge masked.

    ``query`` is ``(h, r)`` or ``(h, r, t)``; with a tail given, the triple and its
    inverse are removed from the graph. Returns ``(m_h, all_node_messages)``.
    """
    h = int(query[0])
    active = None
    if len(query) == 3:
        active = graph.mask_for([query])
    nodes = propagate(params, graph, active, rng)
    return T.gather_rows(nodes, [h]), nodes


# ---------------------------------------------------------------- scoring

def score_triplet(m_h, x_r, m_t, score_w, score_b) -> Tensor:
    """``sigmoid([m_h, x_r, m_t] . w + b)`` for one triple."""
    z = T.concat([T.reshape(T.as_tensor(v), (1, -1)) for v in (m_h, x_r, m_t)], axis=1)
    w = T.reshape(T.as_tensor(score_w), (-1, 1))
    logit = T.add(T.matmul(z, w), T.reshape(T.as_tensor(score_b), (1, 1)))
    return T.reshape(T.sigmoid(logit), ())


def _split_score_w(params: ModelParams):
    d = params.hyper.dim
    w = T.reshape(params["score.w"], (3 * d, 1))
    return T.slice_axis(w, 0, 0, d), T.slice_axis(w, 0, d, 2 * d), T.slice_axis(w, 0, 2 * d, 3 * d)


def _query_part(params: ModelParams, nodes: Tensor, heads, rels):
    """Per-query pieces of the logit: the (h, r) linear term and the query vector."""
    m_h = T.gather_rows(nodes, heads)
    x_r = T.gather_rows(params["relation_embed"], rels)
    w_h, w_r, w_t = _split_score_w(params)
    base = T.add(T.add(T.matmul(m_h, w_h), T.matmul(x_r, w_r)), T.reshape(params["score.b"], (1, 1)))
    qvec = None
    if params.hyper.scorer == "query_mlp":
        hid = T.relu(_linear(T.concat([m_h, x_r], axis=1), params, "query.w1", "query.b1"))
        qvec = _linear(hid, params, "query.w2", "query.b2")
    return base, qvec, w_t


def score_logits(params: ModelParams, nodes: Tensor, heads, rels, tails) -> Tensor:
    """Pre-sigmoid scores, shape ``(B, C)`` for ``tails`` of shape ``(B, C)``.

    ``linear`` is ``[m_h, x_r, m_t] . w + b``; ``query_mlp`` adds
    ``<MLP([m_h, x_r]), m_t>`` so the tail ranking can depend on the query.
    """
    tails = np.asarray(tails, dtype=np.int64)
    B, C = tails.shape
    base, qvec, w_t = _query_part(params, nodes, heads, rels)
    tail_lin = T.reshape(T.gather_rows(T.matmul(nodes, w_t), tails.ravel()), (B, C))
    out = T.add(tail_lin, base)
    if qvec is not None:
        out = T.add(out, T.gather_dot(qvec, nodes, tails))
    return out


def score_all(params: ModelParams, nodes, heads, rels) -> np.ndarray:
    """Logits of every entity as the tail of each ``(head, rel)`` query, ``(B, N)``."""
    nodes = nodes if isinstance(nodes, Tensor) else Tensor(nodes)
    base, qvec, w_t = _query_part(params, nodes, heads, rels)
    out = base.data + (nodes.data @ w_t.data).T
    if qvec is not None:
        out = out + qvec.data @ nodes.data.T
    return out


def num_parameters(num_relations: int, hyper: HyperParams) -> int:
    return int(sum(np.prod(s) for s in param_shapes(num_relations, hyper).values()))
