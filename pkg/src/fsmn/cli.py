"""Command line entry point: ``fsmn prep | train | eval | gradcheck``.

Exit codes: 0 success, 1 usage/config/data error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ConfigError, load_gradcheck_config, load_run_config
from .data import (
    EOS_ID,
    UNK_ID,
    build_vocab,
    clean_wiki_text,
    encode_corpus,
    make_batch,
    read_encoded,
    tokenize,
    write_encoded,
)
from .model import grad_check, init_parameters, perplexity, randomize_for_check

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from None


def _split_lines(text: str, valid_fraction: float, test_fraction: float):
    lines = [line for line in text.splitlines() if line.split()]
    n = len(lines)
    n_test = int(round(n * test_fraction))
    n_valid = int(round(n * valid_fraction))
    n_train = n - n_valid - n_test
    if n_train < 1:
        raise CliError("not enough sentences to split off validation and test sets")
    join = lambda part: "\n".join(part) + "\n"  # noqa: E731
    return join(lines[:n_train]), join(lines[n_train : n_train + n_valid]), join(lines[n_train + n_valid :])


def cmd_prep(args) -> int:
    raw = _read_text(args.raw)
    if args.wiki:
        raw = clean_wiki_text(raw)
    if args.valid is not None or args.test is not None:
        if args.valid is None or args.test is None:
            raise CliError("--valid and --test must be given together")
        texts = {"train": raw, "valid": _read_text(args.valid), "test": _read_text(args.test)}
        if args.wiki:
            texts["valid"] = clean_wiki_text(texts["valid"])
            texts["test"] = clean_wiki_text(texts["test"])
    else:
        train, valid, test = _split_lines(raw, args.valid_fraction, args.test_fraction)
        texts = {"train": train, "valid": valid, "test": test}

    tokens = (tok for sent in tokenize(texts["train"]) for tok in sent)
    try:
        vocab = build_vocab(tokens, args.max_vocab)
    except ValueError as exc:
        raise CliError(str(exc)) from None

    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        vocab.save(out / "vocab.txt")
        print(f"split=vocab size={len(vocab)}")
        for split, text in texts.items():
            sentences = encode_corpus(text, vocab)
            write_encoded(out / f"{split}.ids", sentences, len(vocab))
            words = sum(s.size - 1 for s in sentences)
            oov = sum(int(np.sum(s[:-1] == UNK_ID)) for s in sentences)
            rate = oov / words if words else 0.0
            print(f"split={split} sentences={len(sentences)} tokens={words} oov={oov} oov_rate={rate:.6f}")
    except OSError as exc:
        raise CliError(f"cannot write to {out}: {exc}") from None
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import TrainingError, train

    try:
        run = load_run_config(args.config)
        run.validate()
    except ConfigError as exc:
        raise CliError(f"config error: {exc}") from None
    try:
        result = train(run, resume=args.resume, echo=True)
    except TrainingError as exc:
        raise CliError(f"training aborted: {exc}", EXIT_NUMERIC) from None
    except (ValueError, OSError) as exc:
        raise CliError(str(exc)) from None
    print(f"event=done best_valid_ppl={result.best_valid_ppl:.6g} final={result.final_checkpoint}")
    return EXIT_OK


def evaluate(checkpoint_path, data_path) -> float:
    try:
        params, config, _, _ = checkpoint.load(checkpoint_path)
    except (OSError, checkpoint.CheckpointError) as exc:
        raise CliError(f"cannot load checkpoint {checkpoint_path}: {exc}") from None
    try:
        sentences, vocab_size = read_encoded(data_path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read data {data_path}: {exc}") from None
    if vocab_size != config.vocab_size:
        raise CliError(f"vocab size mismatch: checkpoint has {config.vocab_size}, data was encoded with {vocab_size}")
    if not sentences:
        raise CliError(f"{data_path} contains no sentences")
    return perplexity(params, config, sentences)


def cmd_eval(args) -> int:
    ppl = evaluate(args.checkpoint, args.data)
    print(f"ppl={ppl:.4g}")
    return EXIT_OK


def gradcheck_batch(cfg):
    rng = np.random.default_rng(cfg.seed)
    sentences = []
    for _ in range(cfg.sentences):
        n = int(rng.integers(cfg.min_length, cfg.max_length + 1))
        body = rng.integers(EOS_ID + 1, cfg.vocab_size, size=n - 1)
        sentences.append(np.append(body, EOS_ID))
    return make_batch(sentences, cfg.context_window)


def cmd_gradcheck(args) -> int:
    try:
        cfg = load_gradcheck_config(args.config)
    except ConfigError as exc:
        raise CliError(f"config error: {exc}") from None
    config = cfg.model_config()
    params = randomize_for_check(init_parameters(config, cfg.seed), config, cfg.seed + 1)
    report = grad_check(params, config, gradcheck_batch(cfg), step=cfg.step)
    print(f"arch={config.describe()} params={config.num_parameters()} step={cfg.step:g} threshold={cfg.threshold:g}")
    for line in report.lines(cfg.threshold):
        print(line)
    failed = report.failures(cfg.threshold)
    if failed:
        print(f"result=FAIL groups={','.join(failed)}")
        return EXIT_NUMERIC
    print("result=PASS")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fsmn", description="FSMN language model toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prep", help="build vocabulary and encode train/valid/test splits")
    p.add_argument("raw", help="training text (or the whole corpus when splitting)")
    p.add_argument("out_dir")
    p.add_argument("--max-vocab", type=int, default=10003, help="vocabulary cap including <UNK>, <BOS>, <EOS>")
    p.add_argument("--valid", help="separate validation text")
    p.add_argument("--test", help="separate test text")
    p.add_argument("--valid-fraction", type=float, default=0.05)
    p.add_argument("--test-fraction", type=float, default=0.05)
    p.add_argument("--wiki", action="store_true", help="strip MediaWiki XML and split sentences first")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("config")
    p.add_argument("--resume", help="continue from a last.ckpt written by an earlier run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="perplexity of a checkpoint on an encoded file")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    p.add_argument("config", nargs="?", help="tiny-model config; built-in default if omitted")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
