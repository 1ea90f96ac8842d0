"""Command-line entry point: ``aph <command> [flags]``.

Every command accepts ``--config FILE`` (TOML). Keys are flag names with
dashes or underscores, either at top level or inside ``[extract]``,
``[model]``, ``[train]`` ... tables. Flags given on the command line win over
the file, the file wins over built-in defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus, extraction
from .hypergraph import Hypergraph
from .model import APHModel, HyperParams, check_gradients
from .synthetic import ABLATION_SETTINGS, planted_dataset
from .train_eval import (ABLATION_VARIANTS, TrainConfig, TrainingDiverged, evaluate, graph_for_split,
                         run_ablation, train, write_history_csv)

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("aph")


class UsageError(Exception):
    pass


# -- argument groups ---------------------------------------------------------------

def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--d1", type=int, default=8, help="input embedding size (default 8)")
    g.add_argument("--d2", type=int, default=8, help="hidden size (default 8)")
    g.add_argument("--t", type=int, default=None, help="aspects kept by fusion pooling (default: all)")
    g.add_argument("--k", type=int, default=8, help="FM factor size (default 8)")
    g.add_argument("--leaky-slope", type=float, default=0.01, help="LeakyReLU slope (default 0.01)")
    g.add_argument("--variant", default="APH", help="APH, MAX, MEAN, -AF or -FM (default APH)")
    g.add_argument("--fusion-input", choices=("aggregate", "embedding"), default="aggregate",
                   help="what W7 transforms: the aggregate x_hat or the id embedding")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--gamma", type=float, default=0.005, help="learning rate (default 0.005)")
    g.add_argument("--lam", type=float, default=0.001, help="L2 weight on all parameters (default 0.001)")
    g.add_argument("--epochs", type=int, default=50, help="max epochs (default 50)")
    g.add_argument("--batch-size", type=int, default=256, help="minibatch size (default 256)")
    g.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    g.add_argument("--task", choices=("rating", "ctr"), default="rating")
    g.add_argument("--neg-ratio", type=int, default=4, help="sampled negatives per positive (default 4)")
    g.add_argument("--patience", type=int, default=5, help="early-stopping patience in epochs (default 5)")
    g.add_argument("--no-mask", action="store_true",
                   help="keep each training pair's own review in its representation")


def _add_split_flags(p):
    g = p.add_argument_group("split")
    g.add_argument("--test-ratio", type=float, default=0.2, help="test fraction (default 0.2)")
    g.add_argument("--val-ratio", type=float, default=0.08, help="validation fraction (default 0.08)")


def _add_common(p):
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--seed", type=int, default=42, help="random seed (default 42)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("extract", help="parses + lexicon -> quadruple TSV and stats JSON")
    _add_common(p)
    p.add_argument("--reviews", type=Path, required=True, help="reviews JSONL")
    p.add_argument("--parses", type=Path, required=True, help="CoNLL-U with '# review_id = ...' comments")
    p.add_argument("--positive", type=Path, required=True, help="positive opinion word list")
    p.add_argument("--negative", type=Path, required=True, help="negative opinion word list")
    p.add_argument("--synonyms", type=Path, help="TSV: lemma<TAB>canonical")
    p.add_argument("--c-t", type=int, default=10, help="min aspect frequency (default 10)")
    p.add_argument("--rules", default=",".join(extraction.RULES), help="comma-separated rules to apply")
    p.add_argument("--no-negation", action="store_true", help="do not flip polarity under negation")
    p.add_argument("--min-reviews", type=int, default=None, help="k-core filter on reviews before extraction")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("build-graph", help="quadruple TSV -> serialized hypergraph JSON")
    _add_common(p)
    p.add_argument("--quadruples", type=Path, required=True)
    p.add_argument("--reviews", type=Path, help="with --train-only: split these and keep training pairs")
    p.add_argument("--train-only", action="store_true", help="graph over the training split only")
    _add_split_flags(p)
    p.add_argument("--out", type=Path, required=True, help="graph JSON path")

    p = sub.add_parser("train", help="fit a model; writes checkpoint, graph, history and metrics")
    _add_common(p)
    p.add_argument("--reviews", type=Path, required=True)
    p.add_argument("--quadruples", type=Path, required=True)
    _add_split_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split -> MetricsReport JSON")
    _add_common(p)
    p.add_argument("--reviews", type=Path, required=True)
    p.add_argument("--graph", type=Path, required=True, help="graph JSON written by train")
    p.add_argument("--checkpoint", type=Path, required=True)
    _add_split_flags(p)
    p.add_argument("--task", choices=("rating", "ctr"), default="rating")
    p.add_argument("--neg-ratio", type=int, default=4)
    p.add_argument("--out", type=Path, help="report path (default: stdout)")

    p = sub.add_parser("ablate", help="compare model variants under one config -> JSON")
    _add_common(p)
    p.add_argument("--reviews", type=Path, help="reviews JSONL (omit with --synthetic)")
    p.add_argument("--quadruples", type=Path)
    p.add_argument("--synthetic", action="store_true", help="use planted-structure data, one draw per seed")
    p.add_argument("--variants", default=",".join(ABLATION_VARIANTS), help="comma-separated variants")
    p.add_argument("--seeds", default=None, help="comma-separated seeds (default: --seed)")
    _add_split_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", type=Path, help="output JSON (default: stdout)")

    p = sub.add_parser("stats", help="aspect frequency histogram of a quadruple TSV")
    _add_common(p)
    p.add_argument("--quadruples", type=Path, required=True)
    p.add_argument("--top", type=int, default=10, help="most frequent aspects to list")
    p.add_argument("--out", type=Path, help="output JSON (default: stdout)")

    p = sub.add_parser("explain", help="per-edge attention dump for one item")
    _add_common(p)
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--item", required=True, help="item id")
    p.add_argument("--out", type=Path, help="output JSON (default: stdout)")

    p = sub.add_parser("grad-check", help="tape gradients vs central differences on toy graphs")
    _add_common(p)
    p.add_argument("--d1", type=int, default=4)
    p.add_argument("--d2", type=int, default=4)
    p.add_argument("--edges", type=int, default=10, help="hyperedges per toy graph")
    p.add_argument("--instances", type=int, default=1, help="toy graphs to check")
    p.add_argument("--variant", default="APH")
    p.add_argument("--t", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-4, help="fail above this relative error")
    return parser


# -- config handling ------------------------------------------------------------------

def _flatten(cfg: dict) -> dict:
    flat = {}
    for key, val in cfg.items():
        if isinstance(val, dict):
            flat.update(_flatten(val))
        else:
            flat[key.replace("-", "_")] = val
    return flat


def parse_args(argv):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((x for x in argv if x in choices), None)
    if known.config is None or command is None:
        return parser.parse_args(argv)
    try:
        with known.config.open("rb") as fh:
            cfg = _flatten(tomllib.load(fh))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {known.config}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"bad config file {known.config}: {exc}") from None
    actions = {a.dest: a for a in choices[command]._actions if a.dest not in ("help", "config")}
    unknown = sorted(set(cfg) - set(actions))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    for key in cfg:
        actions[key].required = False
    choices[command].set_defaults(**cfg)
    return parser.parse_args(argv)


def _hyperparams(a) -> HyperParams:
    return HyperParams(d1=a.d1, d2=a.d2, t=a.t, k=a.k, leaky_slope=a.leaky_slope, variant=a.variant,
                       fusion_input=a.fusion_input)


def _train_config(a) -> TrainConfig:
    return TrainConfig(gamma=a.gamma, lam=a.lam, epochs=a.epochs, batch_size=a.batch_size, seed=a.seed,
                       optimizer=a.optimizer, task=a.task, neg_ratio=a.neg_ratio, patience=a.patience,
                       mask_target=not a.no_mask)


def _need(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise UsageError(f"missing input: {p}")


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- commands ------------------------------------------------------------------------------

def cmd_extract(a):
    _need(a.reviews, a.parses, a.positive, a.negative, a.synonyms)
    records = corpus.load_reviews(a.reviews)
    if a.min_reviews:
        records = corpus.filter_min_reviews(records, a.min_reviews)
    sentences = corpus.load_conllu(a.parses)
    lexicon = corpus.Lexicon.from_files(a.positive, a.negative)
    table = corpus.SynonymTable.from_tsv(a.synonyms) if a.synonyms else corpus.SynonymTable()
    rules = frozenset(r.strip() for r in a.rules.split(",") if r.strip())
    cfg = extraction.ExtractionConfig(c_t=a.c_t, rules_enabled=rules, synonym_table=table,
                                      negation=not a.no_negation)
    quads = extraction.build_quadruples(records, sentences, lexicon, cfg)
    a.out.mkdir(parents=True, exist_ok=True)
    extraction.write_quadruples(quads, a.out / "quadruples.tsv")
    stats = extraction.aspect_stats(quads)
    stats["num_reviews"] = len(records)
    extraction.write_stats(stats, a.out / "stats.json")
    print(f"{len(quads)} quadruples, {stats['num_aspects']} aspects -> {a.out}")


def cmd_build_graph(a):
    _need(a.quadruples, a.reviews)
    quads = extraction.read_quadruples(a.quadruples)
    if a.train_only:
        if a.reviews is None:
            raise UsageError("--train-only needs --reviews")
        split = corpus.split_dataset(corpus.load_reviews(a.reviews), a.test_ratio, a.val_ratio, a.seed)
        graph = graph_for_split(quads, split)
    else:
        graph = Hypergraph.from_quadruples(quads)
    a.out.parent.mkdir(parents=True, exist_ok=True)
    graph.save(a.out)
    print(json.dumps(graph.stats(), sort_keys=True))


def _load_split(a):
    records = corpus.load_reviews(a.reviews)
    return records, corpus.split_dataset(records, a.test_ratio, a.val_ratio, a.seed)


def cmd_train(a):
    _need(a.reviews, a.quadruples)
    hp, cfg = _hyperparams(a), _train_config(a)
    records, split = _load_split(a)
    graph = graph_for_split(extraction.read_quadruples(a.quadruples), split)
    model = APHModel(graph, hp, seed=a.seed)
    a.out.mkdir(parents=True, exist_ok=True)
    try:
        history = train(model, split.train, cfg, split.validation, all_items={r.item_id for r in records})
    except TrainingDiverged as exc:
        model.save(a.out / "model.npz")
        write_history_csv(exc.history, a.out / "history.csv")
        raise
    graph.save(a.out / "graph.json")
    model.save(a.out / "model.npz")
    write_history_csv(history, a.out / "history.csv")
    report = evaluate(model, split, cfg, history, all_records=records)
    report.save(a.out / "metrics.json")
    print(f"test mse {report.mse} -> {a.out}" if report.mse is not None else f"done -> {a.out}")


def cmd_evaluate(a):
    _need(a.reviews, a.graph, a.checkpoint)
    records, split = _load_split(a)
    model = APHModel.load(a.checkpoint, Hypergraph.load(a.graph))
    cfg = TrainConfig(seed=a.seed, task=a.task, neg_ratio=a.neg_ratio)
    _emit(evaluate(model, split, cfg, all_records=records).to_json(), a.out)


def cmd_ablate(a):
    hp, cfg = _hyperparams(a), _train_config(a)
    variants = [v.strip() for v in a.variants.split(",") if v.strip()]
    for v in variants:
        HyperParams(variant=v)  # reject unknown names before any training
    seeds = [int(s) for s in a.seeds.split(",")] if a.seeds else [a.seed]
    if a.synthetic:
        def dataset(seed):
            records, quads, _ = planted_dataset(seed=seed, **ABLATION_SETTINGS)
            return records, quads
    else:
        if a.reviews is None or a.quadruples is None:
            raise UsageError("ablate needs --reviews and --quadruples, or --synthetic")
        _need(a.reviews, a.quadruples)
        data = corpus.load_reviews(a.reviews), extraction.read_quadruples(a.quadruples)

        def dataset(seed):
            return data
    result = run_ablation(dataset, hp, cfg, variants, seeds, a.test_ratio, a.val_ratio)
    result["data"] = "synthetic" if a.synthetic else str(a.reviews)
    _emit(_dumps(result), a.out)


def cmd_stats(a):
    _need(a.quadruples)
    _emit(_dumps(extraction.aspect_stats(extraction.read_quadruples(a.quadruples), a.top)), a.out)


def cmd_explain(a):
    _need(a.graph, a.checkpoint)
    model = APHModel.load(a.checkpoint, Hypergraph.load(a.graph))
    _emit(_dumps(model.explain(a.item)), a.out)


def cmd_grad_check(a):
    worst = 0.0
    for n in range(a.instances):
        worst = max(worst, check_gradients(a.seed + n, a.d1, a.d2, a.edges, a.variant, a.t))
    print(f"max relative error {worst:.3e}")
    if worst >= a.tol:
        print(f"aph: gradient check failed (tolerance {a.tol:g})", file=sys.stderr)
        return 1
    return 0


COMMANDS = {"extract": cmd_extract, "build-graph": cmd_build_graph, "train": cmd_train,
            "evaluate": cmd_evaluate, "ablate": cmd_ablate, "stats": cmd_stats,
            "explain": cmd_explain, "grad-check": cmd_grad_check}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"aph: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse: --help or a bad flag
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except UsageError as exc:
        print(f"aph: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, TrainingDiverged) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"aph: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
