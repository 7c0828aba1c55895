"""Command-line interface.

Subcommands: synth, tokenizer train/encode, train, predict, eval,
baseline. Exit codes: 0 success, 2 validation error, 3 training
divergence.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import corpus, evaluation, pipeline
from .crf import TrainingDivergence
from .encoder import CompatibilityError, ModelConfig
from .tensor import ShapeError
from .tokenizer import (
    dump_merges,
    dump_vocab,
    encode as encode_words,
    load_table,
    train_bpe,
    word_frequencies,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3


def _read_records(path: str, scheme=None, split="train"):
    with open(path, encoding="utf-8") as fh:
        return corpus.parse_records(fh, scheme=scheme, split=split)


def _load_scheme_arg(path: str | None):
    if path is None:
        return None
    return corpus.load_scheme(Path(path).read_text(encoding="utf-8"))


def _write_out(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_synth(args) -> int:
    scheme = _load_scheme_arg(args.scheme) or corpus.default_synthetic_scheme()
    rs = corpus.generate_synthetic(args.n, scheme, args.seed)
    _write_out(corpus.serialize_records(rs, scheme), args.out)
    return EXIT_OK


def _cmd_tokenizer_train(args) -> int:
    rs, _ = _read_records(args.input)
    freqs = word_frequencies((r.words for r in rs.records), lowercase=args.lowercase)
    table = train_bpe(freqs, args.num_merges, lowercase=args.lowercase)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "merges.txt").write_text(dump_merges(table), encoding="utf-8")
    (out / "vocab.txt").write_text(dump_vocab(table), encoding="utf-8")
    print(f"trained {len(table.merges)} merges, vocab size {len(table.pieces)}")
    return EXIT_OK


def _cmd_tokenizer_encode(args) -> int:
    table_dir = Path(args.table)
    table = load_table(
        (table_dir / "merges.txt").read_text(encoding="utf-8"),
        (table_dir / "vocab.txt").read_text(encoding="utf-8"),
        lowercase=args.lowercase,
    )
    rs, _ = _read_records(args.input)
    lines = []
    for rec in rs.records:
        for w, seq in enumerate(encode_words(rec.words, table, args.max_len)):
            ids = " ".join(str(i) for i in seq.token_ids)
            pieces = " ".join(seq.pieces)
            lines.append(f"{rec.id}\t{w}\t{ids}\t{pieces}")
    _write_out("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_train(args) -> int:
    config, model_kw = pipeline.load_train_config(args.config)
    config = replace(config, kind=args.model)
    if args.pretrained:
        config = replace(config, pretrained=args.pretrained)
    scheme = _load_scheme_arg(args.scheme)
    train_rs, scheme = _read_records(args.train, scheme=scheme, split="train")
    valid_rs, _ = _read_records(args.valid, scheme=scheme, split="validation")

    table = None
    if args.tokenizer:
        tdir = Path(args.tokenizer)
        table = load_table(
            (tdir / "merges.txt").read_text(encoding="utf-8"),
            (tdir / "vocab.txt").read_text(encoding="utf-8"),
            lowercase=config.lowercase,
        )
    model_config = None
    if args.model == "encoder":
        defaults = dict(
            num_layers=2, hidden_size=32, num_heads=2, ffn_size=64,
            vocab_size=8, max_positions=config.max_len, num_labels=len(scheme.labels),
        )
        defaults.update(model_kw)
        defaults["num_labels"] = len(scheme.labels)
        defaults["max_positions"] = max(defaults["max_positions"], config.max_len)
        model_config = ModelConfig(**defaults)

    checkpoint, metrics = pipeline.train_model(
        train_rs, valid_rs, scheme, config, model_config, table
    )
    checkpoint.save(args.out)
    for m in metrics:
        f1 = "n/a" if m["val_macro_f1"] is None else f"{m['val_macro_f1']:.4f}"
        print(f"epoch {m['epoch']}: train_loss {m['train_loss']:.4f} val_macro_f1 {f1}")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    checkpoint = pipeline.Checkpoint.load(args.checkpoint)
    rs, _ = _read_records(args.input, scheme=checkpoint.scheme, split="test")
    pred = pipeline.predict(checkpoint, rs)
    _write_out(corpus.serialize_records(pred, checkpoint.scheme), args.out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    scheme = _load_scheme_arg(args.scheme)
    train_rs, scheme = _read_records(args.train, scheme=scheme, split="train")
    gold, _ = _read_records(args.gold, scheme=scheme, split="test")
    pred, _ = _read_records(args.pred, scheme=scheme, split="test")
    evaluated = corpus.evaluated_classes(train_rs, scheme)
    counts = evaluation.confusion_counts(gold, pred, scheme)
    report = evaluation.build_report(counts, scheme, evaluated,
                                     include_na=not args.exclude_na)
    _write_out(evaluation.emit_report(report, counts, args.format, scheme), args.out)
    return EXIT_OK


def _cmd_baseline(args) -> int:
    scheme = _load_scheme_arg(args.scheme)
    train_rs, scheme = _read_records(args.train, scheme=scheme, split="train")
    rs, _ = _read_records(args.input, scheme=scheme, split="test")
    if args.kind == "random":
        evaluated = corpus.evaluated_classes(train_rs, scheme)
        pred = evaluation.baseline_random(rs, scheme, args.seed, evaluated)
    else:
        label = (scheme.index(args.majority_label) if args.majority_label
                 else evaluation.majority_label(train_rs, scheme))
        pred = evaluation.baseline_majority(rs, label)
    _write_out(corpus.serialize_records(pred, scheme), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="handover-ie",
        description="Sequence labeling for clinical handover form filling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--scheme")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_synth)

    tok = sub.add_parser("tokenizer", help="subword tokenizer commands")
    tok_sub = tok.add_subparsers(dest="tok_command", required=True)
    p = tok_sub.add_parser("train", help="learn a merge table from a TSV corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--num-merges", type=int, default=200)
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_tokenizer_train)
    p = tok_sub.add_parser("encode", help="tokenize a TSV corpus")
    p.add_argument("--table", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--max-len", type=int, default=128)
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_tokenizer_encode)

    p = sub.add_parser("train", help="train a token classifier")
    p.add_argument("--model", choices=("encoder", "crf"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pretrained")
    p.add_argument("--scheme")
    p.add_argument("--tokenizer")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("predict", help="label records with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold labels")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--exclude-na", action="store_true",
                   help="drop the N.A. class from the macro average")
    p.add_argument("--scheme")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("baseline", help="random or majority-class predictions")
    p.add_argument("--kind", choices=("random", "majority"), required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--majority-label")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scheme")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_baseline)
    return parser


VALIDATION_ERRORS = (
    corpus.ParseError,
    corpus.LabelingError,
    evaluation.AlignmentError,
    CompatibilityError,
    ShapeError,
    ValueError,
    FileNotFoundError,
    IndexError,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except TrainingDivergence as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except VALIDATION_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
