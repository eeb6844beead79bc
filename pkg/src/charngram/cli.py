"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 data error (bad files or datasets),
3 numerical failure during training. Results go to stdout; progress, timing,
and the effective configuration go to stderr, so stdout is reproducible for
a fixed seed.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError
from .evaluate import binned_eval, eval_sts, eval_word_sim
from .io import (
    RunConfig,
    escape_ngram,
    load_groups,
    load_model,
    load_pairs,
    load_reference_vocab,
    load_run_config,
    load_simset,
    load_vocab,
    load_wordlist,
    save_curve,
    save_model,
    save_vocab,
    unescape_ngram,
)
from .model import cosine, embed
from .neighbors import build_working_vocab, nearest_neighbors, ngram_neighbors
from .train import TrainConfig, finite_diff_audit, train
from .vocab import MinCount, TopKPerOrder, build_vocab, encode, normalize


class UsageError(Exception):
    """Command-line level mistake discovered after argument parsing."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad arguments; the contract reserves 2 for data
    # errors, so usage problems are remapped to 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def parse_orders(text: str) -> tuple[int, ...]:
    try:
        orders = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as err:
        raise ValueError(f"bad orders {text!r}; expected comma-separated integers") from err
    if not orders:
        raise ValueError(f"bad orders {text!r}; expected comma-separated integers")
    return orders


def parse_policy(text: str):
    kind, _, arg = text.partition(":")
    try:
        if kind == "mincount":
            return MinCount(int(arg))
        if kind == "topk":
            return TopKPerOrder(int(arg))
    except ValueError as err:
        raise ValueError(f"bad policy {text!r}: {err}") from err
    raise ValueError(f"bad policy {text!r}; expected mincount:C or topk:K")


def parse_scale(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(part) for part in text.split(":"))
    except ValueError as err:
        raise ValueError(f"bad scale {text!r}; expected LO:HI") from err
    if not lo < hi:
        raise ValueError(f"bad scale {text!r}; expected LO < HI")
    return lo, hi


def _arg_type(fn):
    def convert(text):
        try:
            return fn(text)
        except ValueError as err:
            raise argparse.ArgumentTypeError(str(err)) from err

    return convert


def _cmd_build_vocab(args) -> int:
    pairs = load_pairs(args.input)
    corpus = [text for pair in pairs.pairs for text in pair]
    vocab = build_vocab(corpus, args.orders, args.policy, case_mode=args.case)
    save_vocab(vocab, args.out)
    print(f"vocabulary: {len(vocab)} n-grams -> {args.out}", file=sys.stderr)
    return 0


# train flags that override the same-named RunConfig fields when given
_TRAIN_OVERRIDES = (
    "pairs",
    "vocab",
    "out",
    "eval_pairs",
    "curve",
    "dim",
    "activation",
    "margin",
    "reg_lambda",
    "lr",
    "batch",
    "sampling",
    "epochs",
    "seed",
    "curriculum",
    "eval_every",
    "case",
    "pool",
    "orders",
    "policy",
)


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    for name in _TRAIN_OVERRIDES:
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    for required in ("pairs", "out"):
        if getattr(cfg, required) is None:
            raise DataError(f"missing required setting: {required}")
    cfg.validate_paths()
    for line in cfg.to_lines():
        print(line, file=sys.stderr)

    dataset = load_pairs(cfg.pairs)
    if cfg.vocab is not None:
        vocab = load_vocab(cfg.vocab)
    else:
        corpus = [text for pair in dataset.pairs for text in pair]
        try:
            vocab = build_vocab(
                corpus, parse_orders(cfg.orders), parse_policy(cfg.policy), case_mode=cfg.case
            )
        except ValueError as err:
            raise DataError(str(err)) from err

    hook = None
    if cfg.eval_pairs is not None:
        dev = load_pairs(cfg.eval_pairs)
        dev_cvs = [
            (encode(normalize(a, cfg.case), vocab), encode(normalize(b, cfg.case), vocab))
            for a, b in dev.pairs
        ]

        def hook(model, examples_seen):
            values = [
                cosine(embed(c1, model).values, embed(c2, model).values)
                for c1, c2 in dev_cvs
            ]
            return {"dev_mean_cosine": float(np.mean(values))}

    try:
        tcfg = cfg.to_train_config()
        started = time.perf_counter()
        model, _, curve = train(dataset, vocab, tcfg, eval_hook=hook)
    except ValueError as err:
        if isinstance(err, DataError):
            raise
        raise DataError(str(err)) from err
    print(f"trained in {time.perf_counter() - started:.1f}s", file=sys.stderr)

    save_model(model, vocab, cfg.out)
    if cfg.curve is not None:
        save_curve(curve, cfg.curve)
    epoch_losses = [v for _, metric, v in curve.points if metric == "epoch_mean_batch_loss"]
    for epoch, value in enumerate(epoch_losses, start=1):
        print(f"epoch {epoch}\tmean_batch_loss\t{value:.9g}")
    return 0


def _load_dataset_dir(directory, scale) -> list:
    paths = sorted(Path(directory).glob("*.tsv"))
    if not paths:
        raise DataError(f"{directory}: no .tsv datasets found")
    return [load_simset(p, scale=scale) for p in paths]


def _cmd_eval(args) -> int:
    model, vocab = load_model(args.model)
    if args.task == "word":
        dataset = load_simset(args.dataset, scale=args.scale)
        rho = eval_word_sim(model, vocab, dataset, case_mode=args.case)
        print(f"{dataset.name}\tspearman\t{rho:.6f}")
        return 0
    datasets = _load_dataset_dir(args.datasets, args.scale)
    if args.task == "sts":
        grouping = load_groups(args.groups) if args.groups else None
        report = eval_sts(model, vocab, datasets, grouping=grouping, case_mode=args.case)
        for line in report.to_tsv_lines():
            print(line)
        return 0
    # bins
    if args.by == "length":
        results = binned_eval(model, vocab, datasets, by="length", case_mode=args.case)
    elif args.by.startswith("oov:"):
        reference = load_reference_vocab(args.by[len("oov:") :])
        results = binned_eval(
            model, vocab, datasets, by="oov", reference=reference, case_mode=args.case
        )
    else:
        raise UsageError(f"bad --by value {args.by!r}; expected oov:VOCABFILE or length")
    for res in results:
        shown = "NA" if res.correlation is None else f"{res.correlation:.6f}"
        print(f"{res.label}\t{res.n_pairs}\t{shown}")
    return 0


def _cmd_embed(args) -> int:
    model, vocab = load_model(args.model)
    if args.stdin:
        texts = [line.rstrip("\n") for line in sys.stdin]
    elif args.text:
        texts = args.text
    else:
        raise UsageError("embed requires TEXT arguments or --stdin")
    for text in texts:
        emb = embed(encode(normalize(text, args.case), vocab), model)
        print("\t".join(f"{x:.9g}" for x in emb.values))
    return 0


def _cmd_nn(args) -> int:
    model, vocab = load_model(args.model)
    working = build_working_vocab(load_wordlist(args.wordlist), model, vocab, case_mode=args.case)
    for query in args.query:
        for rank, (word, cos) in enumerate(
            nearest_neighbors(query, working, model, vocab, args.k), start=1
        ):
            print(f"{query}\t{rank}\t{word}\t{cos:.6f}")
    return 0


def _cmd_nn_ngram(args) -> int:
    model, vocab = load_model(args.model)
    for raw in args.ngram:
        query = unescape_ngram(raw)
        for rank, (ngram, cos) in enumerate(
            ngram_neighbors(query, model, vocab, args.k), start=1
        ):
            print(f"{escape_ngram(query)}\t{rank}\t{escape_ngram(ngram)}\t{cos:.6f}")
    return 0


def _cmd_audit_grad(args) -> int:
    model, vocab = load_model(args.model)
    pairs = load_pairs(args.pairs)
    batch = pairs.pairs[: args.batch]
    if len(batch) < 2:
        raise DataError("need at least 2 pairs to audit")
    config = TrainConfig(
        dim=model.dim,
        activation=model.activation,
        margin=args.margin,
        reg_lambda=args.reg_lambda,
        sampling=args.sampling,
        seed=args.seed,
        case_mode=args.case,
        batch_size=len(batch),
    )
    worst = finite_diff_audit(model, vocab, batch, config, step=args.step)
    print(f"max_relative_error\t{worst:.6e}")
    return 0


def _add_case(parser) -> None:
    parser.add_argument(
        "--case", choices=("lower", "preserve"), default="lower",
        help="text case handling (default: lower)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="charngram", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("build-vocab", help="count n-grams over pair text and write a vocabulary")
    p.add_argument("--input", required=True, help="training pairs file (both sides are counted)")
    p.add_argument("--orders", type=_arg_type(parse_orders), default=(2, 3, 4),
                   help="comma-separated n-gram orders (default: 2,3,4)")
    p.add_argument("--policy", type=_arg_type(parse_policy), default=MinCount(1),
                   help="mincount:C or topk:K (default: mincount:1)")
    _add_case(p)
    p.add_argument("--out", required=True, help="output vocabulary TSV")
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("train", help="train a model on paraphrase pairs")
    p.add_argument("--config", help="key=value file; explicit flags override it")
    p.add_argument("--pairs")
    p.add_argument("--vocab", help="vocabulary TSV; omitted = build from the pairs")
    p.add_argument("--out", help="output model file")
    p.add_argument("--eval-pairs", dest="eval_pairs", help="dev pairs scored during training")
    p.add_argument("--curve", help="write the training curve TSV here")
    p.add_argument("--dim", type=int)
    p.add_argument("--activation", choices=("linear", "tanh"))
    p.add_argument("--margin", type=float)
    p.add_argument("--lambda", dest="reg_lambda", type=float, help="L2 coefficient")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--batch", type=int)
    p.add_argument("--sampling", choices=("max", "mix"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--curriculum", action=argparse.BooleanOptionalAction, default=None,
                   help="keep file order (descending confidence) for epoch 1")
    p.add_argument("--eval-every", dest="eval_every", type=float,
                   help="curve point interval as a fraction of an epoch")
    p.add_argument("--pool", choices=("same-side", "both-sides"),
                   help="negative candidate pool")
    p.add_argument("--orders", help="used only when --vocab is omitted")
    p.add_argument("--policy", help="used only when --vocab is omitted")
    p.add_argument("--case", choices=("lower", "preserve"), default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a model on similarity datasets")
    tasks = p.add_subparsers(dest="task", required=True, metavar="TASK")

    t = tasks.add_parser("word", help="Spearman on a word similarity TSV")
    t.add_argument("--model", required=True)
    t.add_argument("--dataset", required=True)
    t.add_argument("--scale", type=_arg_type(parse_scale), default=(0.0, 10.0),
                   help="gold score range LO:HI (default: 0:10)")
    _add_case(t)
    t.set_defaults(func=_cmd_eval)

    t = tasks.add_parser("sts", help="Pearson per dataset directory, with group averages")
    t.add_argument("--model", required=True)
    t.add_argument("--datasets", required=True, help="directory of *.tsv datasets")
    t.add_argument("--groups", help="dataset<TAB>group file for group averages")
    t.add_argument("--scale", type=_arg_type(parse_scale), default=(0.0, 5.0),
                   help="gold score range LO:HI (default: 0:5)")
    _add_case(t)
    t.set_defaults(func=_cmd_eval)

    t = tasks.add_parser("bins", help="per-bin Pearson by OOV count or token length")
    t.add_argument("--model", required=True)
    t.add_argument("--datasets", required=True, help="directory of *.tsv datasets (pooled)")
    t.add_argument("--by", required=True, help="oov:VOCABFILE or length")
    t.add_argument("--scale", type=_arg_type(parse_scale), default=(0.0, 5.0))
    _add_case(t)
    t.set_defaults(func=_cmd_eval)

    p = sub.add_parser("embed", help="print the embedding of each input text")
    p.add_argument("--model", required=True)
    p.add_argument("--stdin", action="store_true", help="read one text per stdin line")
    p.add_argument("text", nargs="*", metavar="TEXT")
    _add_case(p)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("nn", help="nearest neighbors of queries in a word list")
    p.add_argument("--model", required=True)
    p.add_argument("--wordlist", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("query", nargs="+", metavar="QUERY")
    _add_case(p)
    p.set_defaults(func=_cmd_nn)

    p = sub.add_parser("nn-ngram", help="nearest vocabulary n-grams of query n-grams")
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("ngram", nargs="+", metavar="NGRAM",
                   help="query n-gram; spaces may be written as \\s")
    p.set_defaults(func=_cmd_nn_ngram)

    p = sub.add_parser("audit-grad", help="compare analytic and numeric gradients")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--batch", type=int, default=5, help="pairs taken from the top of the file")
    p.add_argument("--margin", type=float, default=0.4)
    p.add_argument("--lambda", dest="reg_lambda", type=float, default=0.0)
    p.add_argument("--sampling", choices=("max", "mix"), default="max")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    _add_case(p)
    p.set_defaults(func=_cmd_audit_grad)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except NumericalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except DataError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entry() -> None:
    raise SystemExit(main(sys.argv[1:]))
