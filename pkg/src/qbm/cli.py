"""``qbm`` command line: dataset building, training, evaluation and diagnostics.

Settings resolve as command-line flag > ``--config`` file > built-in
default.  A config file holds ``key = value`` lines (``#`` starts a
comment); keys are the long flag names with ``-`` or ``_``.

Exit codes: 0 success, 2 usage, configuration or I/O error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .dataset import (
    SEPARATOR,
    build_instances,
    dataset_stats,
    filter_and_split,
    group_duplicates,
    instances_to_xy,
    read_instances,
    read_pairs,
    write_instances,
    write_pairs,
)
from .exceptions import ConfigurationError, DatasetTooSmallError, NumericError, ParseError, QBMError
from .model import VARIANTS

logger = logging.getLogger("qbm")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


def _int_tuple(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


# key -> (type, default).  Model and training defaults mirror QBMClassifier.
SETTINGS = {
    "seed": (int, 0),
    "variant": (str, "qbm"),
    "out": (str, None),
    # build-dataset
    "pairs": (str, None),
    "min_size": (int, 3),
    "max_bag": (int, 5),
    "sizes": (_int_tuple, None),
    "train_negatives": (int, 1),
    "test_negatives": (int, 9),
    "depth": (int, 20),
    # train
    "train": (str, None),
    "valid": (str, None),
    "data": (str, None),
    "embeddings": (str, None),
    "stopwords": (str, None),
    "log": (str, None),
    "lr": (float, 1e-4),
    "batch_size": (int, 32),
    "max_epochs": (int, 20),
    "patience": (int, 5),
    "min_count": (int, 1),
    "max_len": (int, 20),
    "embedding_dim": (int, 300),
    "text_filters": (int, 128),
    "text_width": (int, 3),
    "grid_filters": (_int_tuple, (32, 32)),
    "grid_kernel": (int, 3),
    "coverage_hidden": (int, 64),
    "hidden": (int, 256),
    "dropout": (float, 0.5),
    "top_terms": (int, 10),
    "bagcon_len": (int, 100),
    "qq_pool": (str, "max"),
    "dtype": (str, "float32"),
    # evaluate / rank / diagnostics
    "test": (str, None),
    "bag_file": (str, None),
    "query": (str, None),
    "points": (int, 10),
    "n_bags": (int, 500),
}

COMMAND_KEYS = {
    "build-dataset": ["seed", "out", "pairs", "min_size", "max_bag", "sizes", "train_negatives",
                      "test_negatives", "depth"],
    "train": ["seed", "variant", "out", "train", "valid", "data", "embeddings", "stopwords", "log",
              "lr", "batch_size", "max_epochs", "patience", "min_count", "max_len", "max_bag",
              "embedding_dim", "text_filters", "text_width", "grid_filters", "grid_kernel",
              "coverage_hidden", "hidden", "dropout", "top_terms", "bagcon_len", "qq_pool", "dtype"],
    "evaluate": ["seed", "out", "test"],
    "rank": ["seed", "out", "bag_file", "query"],
    "inspect-weights": ["seed", "out"],
    "grad-check": ["seed", "out", "points"],
    "synth-pairs": ["seed", "out", "n_bags"],
}

_ESTIMATOR_KEYS = ["variant", "lr", "batch_size", "max_epochs", "patience", "min_count", "max_len",
                   "max_bag", "embedding_dim", "text_filters", "text_width", "grid_filters",
                   "grid_kernel", "coverage_hidden", "hidden", "dropout", "top_terms", "bagcon_len",
                   "qq_pool", "dtype", "seed", "embeddings", "stopwords"]


class _SeedFilter(logging.Filter):
    seed = 0

    def filter(self, record):
        record.seed = self.seed
        return True


_seed_filter = _SeedFilter()


def _setup_logging(verbose):
    handler = logging.StreamHandler(sys.stderr)
    handler.addFilter(_seed_filter)
    handler.setFormatter(logging.Formatter("[qbm seed=%(seed)s] %(levelname)s %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def read_config(path):
    """Parse a ``key = value`` file into a dict of raw strings."""
    values = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc.strerror}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParseError(f"{path}: expected 'key = value'", line=lineno)
            key = key.strip().replace("-", "_")
            if key not in SETTINGS:
                raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value.strip()
    return values


def _convert(key, value):
    kind = SETTINGS[key][0]
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"bad value for {key}: {value!r}") from None


def resolve_config(command, args):
    """Merge built-in defaults, the config file and explicit flags for ``command``."""
    keys = COMMAND_KEYS[command]
    resolved = {k: SETTINGS[k][1] for k in keys}
    if getattr(args, "config", None):
        for key, value in read_config(args.config).items():
            if key not in resolved:
                raise ConfigurationError(f"config key {key!r} does not apply to {command}")
            resolved[key] = _convert(key, value)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = _convert(key, value)
    if "variant" in resolved and resolved["variant"] not in VARIANTS:
        raise ConfigurationError(f"unknown variant {resolved['variant']!r}; choose from {', '.join(VARIANTS)}")
    _seed_filter.seed = resolved["seed"]
    for key in keys:
        logger.info("config %s = %s", key, resolved[key])
    return resolved


def _emit(text, out=None):
    sys.stdout.write(text)
    sys.stdout.flush()
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


# --------------------------------------------------------------------------
# commands


def cmd_build_dataset(cfg):
    if not cfg["pairs"]:
        raise ConfigurationError("build-dataset needs --pairs")
    out = Path(cfg["out"] or "data")
    pairs = read_pairs(cfg["pairs"])
    if not pairs:
        raise DatasetTooSmallError(f"empty corpus: no usable pairs in {cfg['pairs']}")
    bags = group_duplicates(pairs)
    query_bags = filter_and_split(bags, cfg["min_size"], cfg["max_bag"])
    if not query_bags:
        raise DatasetTooSmallError(f"empty corpus: no bag of at least {cfg['min_size']} questions")
    splits = build_instances(query_bags, cfg["sizes"], cfg["seed"], cfg["train_negatives"],
                             cfg["test_negatives"], depth=cfg["depth"])
    out.mkdir(parents=True, exist_ok=True)
    for name, instances in splits.items():
        write_instances(out / f"{name}.tsv", instances)
    with open(out / "bags.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for _, bag in query_bags:
            fh.write(f"{bag.bag_id}\t{SEPARATOR.join(bag.questions)}\n")
    stats = dataset_stats([b for _, b in query_bags], splits)
    (out / "stats.txt").write_text(stats + "\n", encoding="utf-8")
    _emit(stats + "\n")
    return EXIT_OK


def _split_path(cfg, name):
    if cfg[name]:
        return cfg[name]
    if cfg["data"]:
        return os.path.join(cfg["data"], f"{name}.tsv")
    return None


def cmd_train(cfg):
    from .estimator import QBMClassifier

    train_path = _split_path(cfg, "train")
    if train_path is None:
        raise ConfigurationError("train needs --train FILE or --data DIR")
    valid_path = _split_path(cfg, "valid")
    if cfg["embeddings"] and not os.path.isfile(cfg["embeddings"]):
        raise ConfigurationError(f"embedding file not found: {cfg['embeddings']}")
    if cfg["max_epochs"] < 1:
        raise ConfigurationError(f"max_epochs must be >= 1, got {cfg['max_epochs']}")
    X, y = instances_to_xy(read_instances(train_path, "train"))
    X_valid = y_valid = None
    if valid_path and os.path.exists(valid_path):
        X_valid, y_valid = instances_to_xy(read_instances(valid_path, "valid"))
        if not X_valid:
            X_valid = y_valid = None
    out = cfg["out"] or f"model-{cfg['variant']}.qbm"
    log = cfg["log"] or out + ".log"
    model = QBMClassifier(**{k: cfg[k] for k in _ESTIMATOR_KEYS}, log_path=log)
    t0 = time.perf_counter()
    model.fit(X, y, X_valid, y_valid)
    model.save(out)
    logger.info("trained %s: %d parameters, best epoch %d, val F1 %.4f, %.1fs",
                cfg["variant"], model.n_params_, model.best_epoch_, model.best_f1_,
                time.perf_counter() - t0)
    _emit(f"{out}\tparams={model.n_params_}\tbest_epoch={model.best_epoch_}\tval_f1={model.best_f1_:.4f}\n")
    return EXIT_OK


def _named_checkpoints(specs):
    named = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        if name in named:
            raise ConfigurationError(f"duplicate model name {name!r}; use NAME=PATH")
        named[name] = path
    return named


def cmd_evaluate(cfg, checkpoints, stub_perfect=False):
    from .estimator import QBMClassifier
    from .evaluate import LabelOracle, ablation_report, format_report

    if not cfg["test"]:
        raise ConfigurationError("evaluate needs --test FILE")
    if not checkpoints and not stub_perfect:
        raise ConfigurationError("evaluate needs at least one checkpoint")
    instances = read_instances(cfg["test"], "test")
    models = {name: QBMClassifier.load(path) for name, path in _named_checkpoints(checkpoints).items()}
    if stub_perfect:
        models["oracle"] = LabelOracle(instances)
    _emit(format_report(ablation_report(models, instances)), cfg["out"])
    return EXIT_OK


def read_bag_file(path):
    """``bag_id<TAB>q1||q2||...`` lines, in file order."""
    bags = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), start=1):
            if not row or row == [""]:
                continue
            if len(row) != 2:
                raise ParseError(f"{path}: expected 'bag_id<TAB>questions', got {len(row)} fields", line=lineno)
            questions = tuple(q.strip() for q in row[1].split(SEPARATOR) if q.strip())
            if not row[0].strip() or not questions:
                raise ParseError(f"{path}: empty bag id or bag", line=lineno)
            bags.append((row[0].strip(), questions))
    if not bags:
        raise DatasetTooSmallError(f"bag file {path} is empty")
    return bags


def cmd_rank(cfg, checkpoint):
    from .estimator import QBMClassifier
    from .evaluate import stable_rank

    if not cfg["query"] or not cfg["bag_file"]:
        raise ConfigurationError("rank needs --query TEXT and --bags FILE")
    bags = read_bag_file(cfg["bag_file"])
    model = QBMClassifier.load(checkpoint)
    probs = model.predict_proba([(cfg["query"], qs) for _, qs in bags])[:, 1]
    lines = [f"{bags[i][0]}\t{probs[i]:.4f}\n" for i in stable_rank(probs)]
    _emit("".join(lines), cfg["out"])
    return EXIT_OK


def cmd_inspect_weights(cfg, checkpoint, tokens):
    from .estimator import QBMClassifier
    from .evaluate import inspect_weights

    if not tokens:
        raise ConfigurationError("inspect-weights needs at least one token")
    rows, average = inspect_weights(QBMClassifier.load(checkpoint), tokens)
    lines = ["token\tweight\tlookup\n"]
    lines += [f"{tok}\t{w:.4f}\t{'vocab' if known else 'unk'}\n" for tok, w, known in rows]
    lines.append(f"<average>\t{average:.4f}\tvocab\n")
    _emit("".join(lines), cfg["out"])
    return EXIT_OK


def cmd_grad_check(cfg):
    from .diagnostics import TOLERANCE, gradient_suite

    t0 = time.perf_counter()
    rows = gradient_suite(seed=cfg["seed"], points=cfg["points"])
    failed = [name for name, err, _ in rows if not err < TOLERANCE]
    text = "op\tmax_rel_error\n" + "".join(f"{name}\t{err:.3e}\n" for name, err, _ in rows)
    _emit(text, cfg["out"])
    logger.info("gradient suite: %d checks, %d failed, %.1fs", len(rows), len(failed), time.perf_counter() - t0)
    if failed:
        raise NumericError(f"relative gradient error >= {TOLERANCE} for: {', '.join(failed)}")
    return EXIT_OK


def cmd_synth_pairs(cfg):
    from .synthetic import paraphrase_pairs

    out = cfg["out"] or "pairs.tsv"
    pairs = paraphrase_pairs(cfg["n_bags"], seed=cfg["seed"])
    write_pairs(out, pairs)
    _emit(f"{out}\tpairs={len(pairs)}\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _common(p, variant=False):
    p.add_argument("--config", metavar="PATH", help="key = value settings file")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--out", metavar="PATH")
    if variant:
        p.add_argument("--variant", choices=VARIANTS)


def build_parser():
    parser = argparse.ArgumentParser(prog="qbm", description="Query-bag matching toolkit.")
    parser.add_argument("--version", action="version", version=f"qbm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("build-dataset", help="pairs file -> train/valid/test instance files")
    _common(p)
    p.add_argument("--pairs", metavar="FILE", help="q1<TAB>q2<TAB>is_duplicate file")
    p.add_argument("--min-size", dest="min_size", type=int)
    p.add_argument("--max-bag", dest="max_bag", type=int)
    p.add_argument("--sizes", metavar="TRAIN,VALID,TEST")
    p.add_argument("--train-negatives", dest="train_negatives", type=int)
    p.add_argument("--test-negatives", dest="test_negatives", type=int)
    p.add_argument("--depth", type=int, help="retrieval depth for negative sampling")

    p = sub.add_parser("train", help="train one variant and write a checkpoint")
    _common(p, variant=True)
    p.add_argument("--data", metavar="DIR", help="directory holding train.tsv and valid.tsv")
    p.add_argument("--train", metavar="FILE")
    p.add_argument("--valid", metavar="FILE")
    p.add_argument("--embeddings", metavar="FILE", help="word-vector text file")
    p.add_argument("--stopwords", metavar="FILE")
    p.add_argument("--log", metavar="FILE", help="epoch log (default: OUT.log)")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--embedding-dim", dest="embedding_dim", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--qq-pool", dest="qq_pool", choices=("max", "mean"))

    p = sub.add_parser("evaluate", help="ranking metrics table for one or more checkpoints")
    _common(p)
    p.add_argument("checkpoints", nargs="*", metavar="[NAME=]CHECKPOINT")
    p.add_argument("--test", metavar="FILE", help="test instance file")
    p.add_argument("--stub-perfect", action="store_true", help="add a label-oracle row (test hook)")

    p = sub.add_parser("rank", help="rank candidate bags for one query")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("--query")
    p.add_argument("--bags", dest="bag_file", metavar="FILE", help="bag_id<TAB>q1||q2... lines")

    p = sub.add_parser("inspect-weights", help="coverage weights of tokens")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("tokens", nargs="*")

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    _common(p)
    p.add_argument("--points", type=int, help="random points per check (default 10)")

    p = sub.add_parser("synth-pairs", help="write a synthetic paraphrase pair file")
    _common(p)
    p.add_argument("--bags", dest="n_bags", type=int, help="number of bags (default 500)")
    return parser


def run(args):
    cfg = resolve_config(args.command, args)
    if args.command == "build-dataset":
        return cmd_build_dataset(cfg)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "evaluate":
        return cmd_evaluate(cfg, args.checkpoints, args.stub_perfect)
    if args.command == "rank":
        return cmd_rank(cfg, args.checkpoint)
    if args.command == "inspect-weights":
        return cmd_inspect_weights(cfg, args.checkpoint, args.tokens)
    if args.command == "grad-check":
        return cmd_grad_check(cfg)
    return cmd_synth_pairs(cfg)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return run(args)
    except NumericError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC
    except (QBMError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
