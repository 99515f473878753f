"""Command-line entry point: ``drpn <command> [options]``.

Configuration comes from a flat ``key = value`` file (``--config``) and
from flags; a flag beats the file, which beats the built-in default.
Every command writes the configuration it actually used next to its
outputs as ``config.txt``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 failed check.
"""
from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from .checks import SCOPES, run_checks
from .evaluation import (
    ablation_table,
    attention_svg,
    attention_weights,
    evaluate,
    write_attention_tsv,
    write_report,
    write_scores,
)
from .ingest import (
    DataError,
    build_collab_graph,
    build_profiles,
    dataset_statistics,
    degree_histogram,
    generate_synthetic,
    parse_impressions,
    parse_news_catalog,
    rebuild_splits,
    write_feedback,
    write_graph,
    write_impressions,
    write_news,
    write_profiles,
    write_truth,
)
from .model import VARIANT_LABELS, VARIANTS, ModelConfig
from .numerics import CheckpointError
from .training import Dataset, compare_ablations, load_model, prepare_dataset, train, write_log

log = logging.getLogger("drpn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class Key:
    name: str
    default: object
    kind: type
    doc: str


MODEL_DOCS = {
    "d": "embedding and hidden width",
    "d_att": "hidden width of the gated-aggregation scorer",
    "heads": "attention heads in the title and content encoders",
    "graph_heads": "attention heads in the graph layer",
    "l_p": "positive sequence length (most recent clicks kept)",
    "l_n": "negative sequence length (most recent skips kept)",
    "title_len": "title length in tokens",
    "l_k": "sampled negatives per clicked item",
    "k_nbr": "neighbors kept per news in the co-click graph",
    "lr": "Adam learning rate",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "adam_eps": "Adam epsilon",
    "epochs": "maximum training epochs",
    "batch_size": "samples per optimizer step",
    "patience": "epochs without validation-AUC gain before stopping",
    "seed": "seed for initialization and sampling",
    "variant": f"model variant, one of {', '.join(VARIANTS)}",
}

DATA_KEYS = [
    Key("data", "", str, "directory holding news.tsv and behaviors.tsv (from synth or rebuild-dataset)"),
    Key("news", "", str, "news file; overrides <data>/news.tsv"),
    Key("behaviors", "", str, "impression log; overrides <data>/behaviors.tsv"),
    Key("embeddings", "", str, "optional word-vector text file for the title embeddings"),
    Key("vocab_cap", 0, int, "keep only the most frequent words (0 keeps all)"),
    Key("profile_days", 5, int, "days of logs that form the user profiles"),
    Key("train_days", 1, int, "days of logs after the profile window used for training"),
    Key("val_frac", 0.10, float, "share of the remaining logs, oldest first, used for validation"),
    Key("threads", 1, int, "worker threads for scoring; results do not depend on it"),
]


def model_keys() -> list[Key]:
    base = ModelConfig()
    return [Key(f.name, getattr(base, f.name), type(getattr(base, f.name)), MODEL_DOCS[f.name])
            for f in fields(ModelConfig)]


def run_keys() -> dict[str, Key]:
    return {k.name: k for k in DATA_KEYS + model_keys()}


def _convert(key: Key, text) -> object:
    if not isinstance(text, str):
        return text
    try:
        if key.kind is bool:
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        return key.kind(text.strip())
    except ValueError:
        raise UsageError(f"{key.name}: cannot read {text!r} as {key.kind.__name__}") from None


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out, bad = {}, []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            bad.append(f"line {lineno}: expected key = value")
            continue
        k, v = (p.strip() for p in line.split("=", 1))
        out[k] = v
    if bad:
        raise UsageError(f"{path}: " + "; ".join(bad))
    return out


def resolve(keys: dict[str, Key], file_values: dict[str, str], flag_values: dict[str, object]) -> dict:
    """Merge defaults, file and flags; every unknown key is reported at once."""
    unknown = sorted(set(file_values) - set(keys))
    if unknown:
        raise UsageError("unknown config keys: " + ", ".join(unknown))
    cfg = {k: key.default for k, key in keys.items()}
    errors = []
    for source in (file_values, flag_values):
        for k, v in source.items():
            if v is None:
                continue
            try:
                cfg[k] = _convert(keys[k], v)
            except UsageError as exc:
                errors.append(str(exc))
    if errors:
        raise UsageError("; ".join(errors))
    return cfg


def model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig.from_dict(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def write_config(path, cfg: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k in sorted(cfg):
            fh.write(f"{k} = {cfg[k]}\n")


# ---------------------------------------------------------------- helpers


@contextmanager
def staged_dir(out: Path):
    """Yield a scratch directory that replaces ``out`` only if the block succeeds."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    os.replace(tmp, out)


def _data_paths(cfg: dict) -> tuple[Path, Path]:
    data = Path(cfg["data"]) if cfg["data"] else None
    news = Path(cfg["news"]) if cfg["news"] else (data / "news.tsv" if data else None)
    beh = Path(cfg["behaviors"]) if cfg["behaviors"] else (data / "behaviors.tsv" if data else None)
    if news is None or beh is None:
        raise UsageError("set data=<dir> or both news=<file> and behaviors=<file>")
    for p in (news, beh):
        if not p.is_file():
            raise DataError(f"missing input file {p}")
    return news, beh


def load_dataset(cfg: dict, mc: ModelConfig) -> Dataset:
    news, beh = _data_paths(cfg)
    catalog = parse_news_catalog(news, cfg["vocab_cap"] or None, mc.title_len)
    logs = parse_impressions(beh)
    return prepare_dataset(catalog, logs, mc, cfg["profile_days"], cfg["train_days"], cfg["val_frac"])


def _apply_embeddings(model, cfg: dict) -> None:
    if not cfg["embeddings"]:
        return
    from .encoders import load_pretrained_embeddings

    path = Path(cfg["embeddings"])
    if not path.is_file():
        raise DataError(f"missing embeddings file {path}")
    emb = model.store["word_emb"]
    matrix, coverage = load_pretrained_embeddings(path, model.catalog.vocab, model.config.d, emb.data)
    emb.data[...] = matrix
    log.info("pretrained vectors cover %.1f%% of the vocabulary", 100 * coverage)


def _split_logs(data: Dataset, split: str):
    splits = data.splits.as_dict()
    if split not in splits:
        raise UsageError(f"unknown split {split!r}; choose from {', '.join(splits)}")
    return splits[split]


# ---------------------------------------------------------------- commands


def cmd_rebuild(args) -> int:
    for p in (args.behaviors, args.news):
        if not Path(p).is_file():
            raise DataError(f"missing input file {p}")
    catalog = parse_news_catalog(args.news)
    logs = parse_impressions(args.behaviors)
    splits = rebuild_splits(logs, args.profile_days, args.train_days, args.val_frac)
    profiles, matrix = build_profiles(splits.profile_logs, args.l_p, args.l_n)
    graph = build_collab_graph(matrix, args.k_nbr)
    with staged_dir(Path(args.out)) as tmp:
        write_news(tmp / "news.tsv", catalog)
        write_impressions(tmp / "behaviors.tsv", logs)
        for name, part in splits.as_dict().items():
            write_impressions(tmp / f"{name}.tsv", part)
        write_profiles(tmp / "profiles.tsv", profiles)
        write_feedback(tmp / "feedback.tsv", matrix)
        write_graph(tmp / "graph.tsv", graph)
        with open(tmp / "degree_histogram.tsv", "w", encoding="utf-8") as fh:
            fh.write("degree\tnews\n")
            for deg, count in sorted(degree_histogram(graph).items()):
                fh.write(f"{deg}\t{count}\n")
        with open(tmp / "stats.tsv", "w", encoding="utf-8") as fh:
            for k, v in dataset_statistics(catalog, splits).items():
                fh.write(f"{k}\t{v}\n")
        write_config(tmp / "config.txt", {k: getattr(args, k) for k in
                                          ("news", "behaviors", "profile_days", "train_days", "val_frac",
                                           "l_p", "l_n", "k_nbr")})
    print(f"rebuilt dataset: {len(splits.profile_logs)} profile, {len(splits.train_logs)} train, "
          f"{len(splits.validation_logs)} valid, {len(splits.test_logs)} test impressions -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        catalog, logs, truth = generate_synthetic(args.users, args.news, args.topics, args.noise_rate, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with staged_dir(Path(args.out)) as tmp:
        write_news(tmp / "news.tsv", catalog)
        write_impressions(tmp / "behaviors.tsv", logs)
        write_truth(tmp / "truth.tsv", truth)
        write_config(tmp / "config.txt", {k: getattr(args, k) for k in ("users", "news", "topics", "noise_rate", "seed")})
    print(f"synthetic data: {len(catalog)} news, {len(logs)} impressions, "
          f"noise fraction {truth.noise_fraction():.3f} -> {args.out}")
    return EXIT_OK


def _run_config(args, keys) -> dict:
    file_values = read_config_file(args.config) if args.config else {}
    flags = {k: getattr(args, k, None) for k in keys}
    return resolve(keys, file_values, flags)


def cmd_train(args) -> int:
    keys = run_keys()
    cfg = _run_config(args, keys)
    mc = model_config(cfg)
    data = load_dataset(cfg, mc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.txt", cfg)
    resume = out / "last.ckpt" if (out / "last.ckpt").exists() else None
    model = None
    if resume is None and cfg["embeddings"]:
        from .model import DRPN

        model = DRPN(mc, data.catalog, data.graph, data.known_news)
        _apply_embeddings(model, cfg)
    if resume is not None:
        log.info("resuming from %s", resume)
    with threadpool_limits(1):
        result = train(mc, data, threads=cfg["threads"], checkpoint_dir=out, resume=resume, model=model)
        report, scored = evaluate(result.model, data.splits.test_logs, data.profiles, cfg["threads"])
    write_log(out / "train_log.tsv", result.log_rows)
    write_report(out / "test_metrics.tsv", report)
    write_scores(out / "test_scores.tsv", scored)
    print(f"{VARIANT_LABELS[mc.variant]} test: {report.table()}")
    return EXIT_OK


def _checkpoint_config(checkpoint: Path, args) -> dict:
    """Run configuration for a checkpoint: its config.txt, then --config, then flags."""
    keys = run_keys()
    file_values = {}
    beside = checkpoint.parent / "config.txt"
    if beside.exists():
        file_values.update(read_config_file(beside))
    if args.config:
        file_values.update(read_config_file(args.config))
    return resolve(keys, file_values, {k: getattr(args, k, None) for k in keys})


def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise DataError(f"missing checkpoint {ckpt}")
    cfg = _checkpoint_config(ckpt, args)
    mc = model_config(cfg)
    data = load_dataset(cfg, mc)
    model = load_model(ckpt, data, mc)
    logs = _split_logs(data, args.split)
    with threadpool_limits(1):
        report, scored = evaluate(model, logs, data.profiles, cfg["threads"])
    with staged_dir(Path(args.out)) as tmp:
        write_report(tmp / "metrics.tsv", report)
        write_scores(tmp / "scores.tsv", scored)
        write_config(tmp / "config.txt", {**cfg, "checkpoint": str(ckpt), "split": args.split})
    print(f"{args.split}: {report.table()}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    keys = run_keys()
    cfg = _run_config(args, keys)
    mc = model_config(cfg)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise UsageError("unknown variants: " + ", ".join(bad))
    data = load_dataset(cfg, mc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.txt", {**cfg, "variants": ",".join(variants)})
    results = compare_ablations(mc, data, variants, cfg["threads"], out)
    table = ablation_table(results)
    (out / "ablation.tsv").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_checks(args.scope, args.tol)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed at tol {args.tol:g}")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_inspect(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise DataError(f"missing checkpoint {ckpt}")
    cfg = _checkpoint_config(ckpt, args)
    mc = model_config(cfg)
    data = load_dataset(cfg, mc)
    model = load_model(ckpt, data, mc)
    if args.user not in data.profiles:
        raise DataError(f"user {args.user!r} has no profile")
    rows = attention_weights(model, data.profiles[args.user])
    with staged_dir(Path(args.out)) as tmp:
        write_attention_tsv(tmp / "attention.tsv", args.user, rows)
        (tmp / "attention.svg").write_text(attention_svg(args.user, rows), encoding="utf-8")
    print(f"{len(rows)} attention weights for {args.user} -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_run_keys(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    for key in run_keys().values():
        p.add_argument(f"--{key.name.replace('_', '-')}", dest=key.name, default=None, metavar=key.kind.__name__.upper(),
                       help=f"{key.doc} (default: {key.default!r})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drpn", description=__doc__.split("\n\n")[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter,
                     epilog="Exit codes: 0 success, 1 usage/config error, 2 data error, 3 failed check.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rebuild-dataset", help="split raw logs and build profiles, feedback matrix and graph")
    p.add_argument("--behaviors", required=True, help="impression log (MIND behaviors.tsv layout)")
    p.add_argument("--news", required=True, help="news file (MIND news.tsv layout)")
    p.add_argument("--profile-days", type=int, default=5, help="profile window in days (default: 5)")
    p.add_argument("--train-days", type=int, default=1, help="training window in days (default: 1)")
    p.add_argument("--val-frac", type=float, default=0.10,
                   help="oldest share of the remaining logs used for validation (default: 0.1)")
    p.add_argument("--l-p", type=int, default=30, help="positive sequence length (default: 30)")
    p.add_argument("--l-n", type=int, default=60, help="negative sequence length (default: 60)")
    p.add_argument("--k-nbr", type=int, default=5, help="graph neighbors per news (default: 5)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_rebuild)

    p = sub.add_parser("synth", help="generate a topic-structured dataset with planted feedback noise")
    p.add_argument("--users", type=int, default=2000, help="number of users (default: 2000)")
    p.add_argument("--news", type=int, default=1000, help="number of news (default: 1000)")
    p.add_argument("--topics", type=int, default=8, help="number of topics (default: 8)")
    p.add_argument("--noise-rate", type=float, default=0.2, help="label flip rate in the profile window (default: 0.2)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one variant; reruns resume from <out>/last.ckpt")
    _add_run_keys(p)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score one split with a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file; its config.txt supplies defaults")
    p.add_argument("--split", default="test", help="profile, train, valid or test (default: test)")
    _add_run_keys(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare variants; finished variants are reused")
    _add_run_keys(p)
    p.add_argument("--variants", default=",".join(VARIANTS), help="comma-separated variants (default: all)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--scope", choices=SCOPES, default="full", help="op, module or full (default: full)")
    p.add_argument("--tol", type=float, default=1e-4, help="max relative error (default: 1e-4)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="export one user's denoising weights as TSV and SVG")
    p.add_argument("--checkpoint", required=True, help="checkpoint file; its config.txt supplies defaults")
    p.add_argument("--user", required=True, help="user id")
    _add_run_keys(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"drpn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"drpn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"drpn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
