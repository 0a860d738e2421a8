"""Margin negative-log-likelihood training with negative sampling and early stopping."""
from __future__ import annotations

import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from ._runtime import tune_allocator
from .data import KnowledgeGraph, corrupt_entities, corrupt_entities_filtered
from .model import HyperParams, MessageGraph, ModelParams, init_params, propagate, score_logits
from .tensor import Tensor

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 512
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    gamma: float = 5.0
    n_neg: int = 64
    seed: int = 0
    eval_every: int = 1
    patience: int = 15
    filter_negatives: bool = True

    def validate(self):
        for name in ("epochs", "batch_size", "n_neg", "eval_every", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}; choose adam or sgd")
        if not math.isfinite(self.gamma):
            raise ValueError("gamma must be finite")
        return self


# ---------------------------------------------------------------- loss

def margin_nll(pos_logit: Tensor, neg_logits: Tensor, gamma: float) -> Tensor:
    """Mean over queries of ``-log s(p - g) - 1/n sum_i log s(g - n_i)``.

    ``pos_logit`` has shape ``(B,)`` and ``neg_logits`` ``(B, n)``; ``s`` is the
    logistic function.
    """
    B, n = neg_logits.shape
    pos_term = T.log_sigmoid(T.sub(pos_logit, T.Tensor(gamma)))
    neg_term = T.log_sigmoid(T.sub(T.Tensor(gamma), neg_logits))
    per_query = T.add(pos_term, T.scale(T.sum_axis(neg_term, 1), 1.0 / n))
    return T.scale(T.sum_all(per_query), -1.0 / B)


def loss(pos_score, neg_scores, gamma: float) -> float:
    """Loss of one positive logit against a list of negative logits."""
    pos = Tensor(np.asarray([pos_score], dtype=float))
    neg = Tensor(np.asarray(neg_scores, dtype=float).reshape(1, -1))
    return float(margin_nll(pos, neg, gamma).data)


# ---------------------------------------------------------------- optimizers

class SGD:
    def __init__(self, params: ModelParams, lr: float):
        self.params = params
        self.lr = lr
        self.t = 0

    def step(self):
        self.t += 1
        for p in self.params.values():
            if p.grad is not None:
                p.data -= self.lr * p.grad

    def state(self) -> dict[str, np.ndarray]:
        return {}

    def load_state(self, state, t):
        self.t = t


class Adam:
    """Adam; a zero gradient from zero moments leaves parameters bit-identical."""

    def __init__(self, params: ModelParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, state, t):
        self.t = t
        for k in self.m:
            self.m[k] = np.array(state[f"adam.m.{k}"], dtype=np.float64)
            self.v[k] = np.array(state[f"adam.v.{k}"], dtype=np.float64)


def make_optimizer(params: ModelParams, config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(params, config.learning_rate)
    return Adam(params, config.learning_rate)


# ---------------------------------------------------------------- state

@dataclass
class TrainState:
    params: ModelParams
    optimizer: object
    config: TrainConfig
    epoch: int = 0
    best_mrr: float = -1.0
    best_epoch: int = 0
    best_params: ModelParams | None = None
    history: list = field(default_factory=list)
    evaluations: int = 0
    header: dict | None = None


# ---------------------------------------------------------------- steps

def _both(kg: KnowledgeGraph, rows: np.ndarray) -> np.ndarray:
    inv = np.stack([rows[:, 2], rows[:, 1] + kg.num_base_relations, rows[:, 0]], axis=1)
    return np.concatenate([rows, inv])


def batch_loss(params: ModelParams, graph: MessageGraph, triple_idx: np.ndarray,
               gamma: float, n_neg: int, rng, filter_negatives: bool = False) -> Tensor:
    """Loss of a batch of training triples with their edges masked from the graph.

    With ``filter_negatives`` a corruption never forms another training triple.
    """
    kg = graph.kg
    active = np.ones(graph.num_edges, dtype=bool)
    active[kg.edge_ids_of_triples(triple_idx)] = False
    q = _both(kg, kg.train[triple_idx])
    if filter_negatives:
        negs = corrupt_entities_filtered(q, n_neg, kg.num_entities, kg.num_relations,
                                         graph.train_keys, rng)
    else:
        negs = corrupt_entities(q[:, 2], n_neg, kg.num_entities, rng)
    nodes = propagate(params, graph, active, rng)
    cands = np.concatenate([q[:, 2:3], negs], axis=1)
    logits = score_logits(params, nodes, q[:, 0], q[:, 1], cands)
    pos = T.reshape(T.slice_axis(logits, 1, 0, 1), (len(q),))
    neg = T.slice_axis(logits, 1, 1, n_neg + 1)
    return margin_nll(pos, neg, gamma)


def dataset_loss(params: ModelParams, graph: MessageGraph, config: TrainConfig,
                 seed: int = 12345) -> float:
    """Mean batch loss over the training split with fixed negatives; no updates."""
    n = len(graph.kg.train)
    total, count = 0.0, 0
    for b, lo in enumerate(range(0, n, config.batch_size)):
        idx = np.arange(lo, min(lo + config.batch_size, n))
        rng = np.random.default_rng([seed, b])
        value = batch_loss(params, graph, idx, config.gamma, config.n_neg, rng, config.filter_negatives)
        total += float(value.data) * len(idx)
        count += len(idx)
    return total / count


def train_step(state: TrainState, graph: MessageGraph, triple_idx, rng) -> float:
    params = state.params
    params.zero_grad()
    with T.Tape() as tape:
        value = batch_loss(params, graph, triple_idx, state.config.gamma, state.config.n_neg, rng,
                           state.config.filter_negatives)
    loss_value = float(value.data)
    if not math.isfinite(loss_value):
        return loss_value
    tape.backward(value)
    state.optimizer.step()
    return loss_value


def train(kg: KnowledgeGraph, hyper: HyperParams, config: TrainConfig, out_dir=None,
          graph: MessageGraph | None = None, evaluate_fn=None, echo: bool = False) -> TrainState:
    """Train from scratch; returns the final state with ``best_params`` populated.

    ``evaluate_fn(params, graph) -> dict`` with key ``mrr`` drives early stopping;
    by default it is the filtered MRR on the validation split (or the training
    split when no validation triples exist).
    """
    from .checkpoint import save_checkpoint
    from .evaluation import evaluate

    tune_allocator()
    hyper.validate()
    config.validate()
    if len(kg.train) == 0:
        raise ValueError("training split is empty")
    if graph is None:
        graph = MessageGraph(kg, hyper.max_neighbors, config.seed)
    if evaluate_fn is None:
        split = "valid" if len(kg.valid) else "train"

        def evaluate_fn(p, g):
            return evaluate(g, p, split).summary()

    params = init_params(kg.num_relations, hyper, config.seed)
    state = TrainState(params, make_optimizer(params, config), config)
    out = Path(out_dir) if out_dir is not None else None
    logfile = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        logfile = open(out / "train_log.jsonl", "w", encoding="utf-8")

    n = len(kg.train)
    stale = 0
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.time()
            order = np.random.default_rng([config.seed, epoch]).permutation(n)
            losses = []
            for b, lo in enumerate(range(0, n, config.batch_size)):
                idx = np.sort(order[lo:lo + config.batch_size])
                rng = np.random.default_rng([config.seed, epoch, b])
                try:
                    value = train_step(state, graph, idx, rng)
                except FloatingPointError as exc:
                    raise NumericalError(f"{exc} at epoch {epoch}, batch {b}") from exc
                if not math.isfinite(value):
                    raise NumericalError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
                losses.append(value)
            state.epoch = epoch
            record = {"epoch": epoch, "train_loss": float(np.mean(losses)),
                      "train_loss_median": float(np.median(losses)),
                      "epoch_seconds": round(time.time() - t0, 3)}
            if epoch % config.eval_every == 0 or epoch == config.epochs:
                metrics = evaluate_fn(state.params, graph)
                state.evaluations += 1
                record.update({f"valid_{k}": v for k, v in metrics.items()})
                if metrics["mrr"] > state.best_mrr:
                    state.best_mrr = metrics["mrr"]
                    state.best_epoch = epoch
                    state.best_params = state.params.copy()
                    stale = 0
                    if out is not None:
                        save_checkpoint(out / "best.ckpt", state, kg)
                else:
                    stale += 1
            state.history.append(record)
            line = json.dumps(record)
            if logfile is not None:
                logfile.write(line + "\n")
                logfile.flush()
            if echo:
                print(line, file=sys.stdout, flush=True)
            log.info(line)
            if stale >= config.patience:
                break
    finally:
        if logfile is not None:
            logfile.close()
    if state.best_params is None:
        state.best_params = state.params.copy()
    if out is not None:
        save_checkpoint(out / "last.ckpt", state, kg)
    return state
