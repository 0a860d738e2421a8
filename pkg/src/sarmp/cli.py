"""``sarmp`` command line: prepare, train, eval, predict, sweep.

Exit codes: 0 success, 1 usage or invalid configuration, 2 data or I/O
failure (including checkpoint/vocabulary mismatch), 3 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import sys
from contextlib import ExitStack
from pathlib import Path

import numpy as np

from . import config as cfg
from ._runtime import tune_allocator
from .checkpoint import CheckpointError, load_checkpoint
from .data import DatasetError, categorize_relations, load_dataset, write_vocab
from .evaluation import evaluate, parse_axis, rank_query, sweep, sweep_json, sweep_table
from .model import MessageGraph, propagate, score_all
from .training import NumericalError, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _add_run_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    g = p.add_argument_group("model and training overrides")
    for key in cfg.KEYS:
        if key in ("data", "out", "threads"):
            continue
        g.add_argument("--" + key.replace("_", "-"), dest=key, metavar=cfg.KEYS[key].__name__.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sarmp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="validate a dataset and dump vocabularies")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data")
    p.add_argument("--out")
    _add_run_flags(p)

    p = sub.add_parser("eval", help="filtered ranking evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset dir (default: the one recorded in the checkpoint)")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--json", help="also write the report as JSON here")
    p.add_argument("--threads", type=int)

    p = sub.add_parser("predict", help="plausibility of one triple")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--triple", required=True, help='"head relation tail" (tab or space separated)')
    p.add_argument("--data", help="dataset dir (default: the one recorded in the checkpoint)")
    p.add_argument("--threads", type=int)

    p = sub.add_parser("sweep", help="train and compare one model per value of an axis")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--axis", required=True, help="k, hops, aggregator or selector")
    p.add_argument("--values", required=True, help="comma separated")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    _add_run_flags(p)
    return parser


# ---------------------------------------------------------------- helpers

def _limit_threads(stack: ExitStack, threads):
    if threads is None:
        return
    if threads < 1:
        raise UsageError(f"--threads must be >= 1, got {threads}")
    from threadpoolctl import threadpool_limits

    # the compiled selection kernel is serial; BLAS is the only thread pool
    stack.enter_context(threadpool_limits(limits=threads))


def _run_config(args) -> cfg.RunConfig:
    flags = {k: getattr(args, k, None) for k in cfg.KEYS}
    try:
        run = cfg.resolve(args.config, flags).validate()
    except cfg.ConfigError as exc:
        raise UsageError(str(exc)) from exc
    if run.data is None:
        raise UsageError("no dataset given (--data, config file or SARMP_DATA)")
    if run.out is None:
        raise UsageError("no output directory given (--out, config file or SARMP_OUT)")
    return run


def _load_for_checkpoint(args):
    state = load_checkpoint(args.checkpoint)
    data = args.data or state.header.get("data_dir")
    if not data:
        raise DatasetError("checkpoint records no dataset directory; pass --data")
    kg = load_dataset(data)
    if kg.vocab_hash() != state.header["vocab_hash"]:
        raise CheckpointError(
            f"{args.checkpoint}: vocabulary hash does not match dataset {data}; "
            "checkpoint was trained on different data")
    return kg, state


# ---------------------------------------------------------------- commands

def cmd_prepare(args) -> int:
    kg = load_dataset(args.data)
    out = Path(args.out)
    write_vocab(kg, out)
    cats = categorize_relations(kg)
    stats = {"dataset": kg.name, "entities": kg.num_entities,
             "relations": kg.num_base_relations, "relations_with_inverses": kg.num_relations,
             "train": len(kg.train), "valid": len(kg.valid), "test": len(kg.test),
             "isolated_entities": int(len(kg.isolated)),
             "category_sizes": {c: sum(v == c for v in cats.values()) for c in sorted(set(cats.values()))},
             "vocab_hash": kg.vocab_hash()}
    (out / "dataset_stats.json").write_text(json.dumps(stats, indent=1), encoding="utf-8")
    print(json.dumps(stats, indent=1))
    return EXIT_OK


def cmd_train(args) -> int:
    run = _run_config(args)
    kg = load_dataset(run.data)
    out = Path(run.out)
    cfg.write_snapshot(run, out)
    with ExitStack() as stack:
        _limit_threads(stack, run.threads)
        state = train(kg, run.hyper, run.train, out_dir=out, echo=True)
        graph = MessageGraph(kg, run.hyper.max_neighbors, run.train.seed)
        if len(kg.test):
            report = evaluate(graph, state.best_params, "test")
            report.to_json(out / "test_report.json")
            print(report.to_text())
    print(f"best valid MRR {state.best_mrr:.4f} at epoch {state.best_epoch}; "
          f"checkpoint {out / 'best.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    with ExitStack() as stack:
        _limit_threads(stack, args.threads)
        kg, state = _load_for_checkpoint(args)
        graph = MessageGraph(kg, state.params.hyper.max_neighbors, state.config.seed)
        report = evaluate(graph, state.params, args.split)
    print(report.to_text())
    if args.json:
        report.to_json(args.json)
    return EXIT_OK


def _parse_triple(text: str):
    parts = text.split("\t") if "\t" in text else text.split()
    if len(parts) != 3:
        raise UsageError(f'--triple expects "head relation tail", got {text!r}')
    return [p.strip() for p in parts]


def cmd_predict(args) -> int:
    h_name, r_name, t_name = _parse_triple(args.triple)
    with ExitStack() as stack:
        _limit_threads(stack, args.threads)
        kg, state = _load_for_checkpoint(args)
        eid = {x: i for i, x in enumerate(kg.entities)}
        rid = {kg.relation_name(i): i for i in range(kg.num_relations)}
        for name, table, kind in ((h_name, eid, "entity"), (r_name, rid, "relation"), (t_name, eid, "entity")):
            if name not in table:
                raise DatasetError(f"unknown {kind} {name!r}")
        h, r, t = eid[h_name], rid[r_name], eid[t_name]
        params = state.params
        graph = MessageGraph(kg, params.hyper.max_neighbors, state.config.seed)
        nodes = propagate(params, graph, graph.mask_for([(h, r, t)]))
        scores = score_all(params, nodes, [h], [r])[0]
        rank = rank_query(graph, params, (h, r), t, scores=scores)
    prob = float(1.0 / (1.0 + np.exp(-scores[t])))
    print(json.dumps({"triple": [h_name, r_name, t_name], "score": prob,
                      "logit": float(scores[t]), "filtered_rank": rank}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        parse_axis(args.axis)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values is empty")
    run = _run_config(args)
    kg = load_dataset(run.data)
    out = Path(run.out)
    cfg.write_snapshot(run, out)
    with ExitStack() as stack:
        _limit_threads(stack, run.threads)
        try:
            rows = sweep(kg, run.hyper, run.train, args.axis, values, args.split, out, echo=True)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    table = sweep_table(rows)
    (out / "sweep.txt").write_text(table + "\n", encoding="utf-8")
    (out / "sweep.json").write_text(json.dumps(sweep_json(rows), indent=1), encoding="utf-8")
    print(table)
    return EXIT_OK


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    tune_allocator()
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sarmp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"sarmp {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, CheckpointError, OSError) as exc:
        print(f"sarmp {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
