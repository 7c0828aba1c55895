#!/usr/bin/env python3
"""End-to-end experiment on synthetic data.

Generates train/validation/test splits, trains the BPE tokenizer, the
transformer token classifier, and the CRF baseline, runs the trivial
baselines, evaluates everything on the test split, and writes per-method
reports plus a leaderboard into the work directory.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from handover_ie import evaluation, pipeline
from handover_ie.corpus import (
    default_synthetic_scheme,
    dump_scheme,
    evaluated_classes,
    generate_synthetic,
    serialize_records,
)
from handover_ie.encoder import ModelConfig
from handover_ie.tokenizer import train_bpe, word_frequencies
from handover_ie.corpus import RecordSet


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-train", type=int, default=60)
    parser.add_argument("--n-valid", type=int, default=20)
    parser.add_argument("--n-test", type=int, default=30)
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--learning-rate", type=float, default=3e-3)
    parser.add_argument("--batch-size", type=int, default=4)
    parser.add_argument("--num-merges", type=int, default=80)
    parser.add_argument("--hidden-size", type=int, default=32)
    parser.add_argument("--num-layers", type=int, default=2)
    parser.add_argument("--num-heads", type=int, default=2)
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    scheme = default_synthetic_scheme()

    splits = {}
    for name, n, offset in (("train", args.n_train, 0),
                            ("validation", args.n_valid, 1),
                            ("test", args.n_test, 2)):
        rs = generate_synthetic(n, scheme, seed=args.seed + offset)
        rs = RecordSet(split=name, records=rs.records)
        (work / f"{name}.tsv").write_text(serialize_records(rs, scheme), encoding="utf-8")
        splits[name] = rs
    (work / "labels.txt").write_text(dump_scheme(scheme), encoding="utf-8")

    freqs = word_frequencies(r.words for r in splits["train"].records)
    table = train_bpe(freqs, args.num_merges)

    base = pipeline.TrainConfig(
        kind="encoder", learning_rate=args.learning_rate, batch_size=args.batch_size,
        epochs=args.epochs, seed=args.seed, max_len=64, num_merges=args.num_merges,
    )
    model_config = ModelConfig(
        num_layers=args.num_layers, hidden_size=args.hidden_size,
        num_heads=args.num_heads, ffn_size=2 * args.hidden_size,
        vocab_size=len(table.pieces), max_positions=64,
        num_labels=len(scheme.labels),
    )
    evaluated = evaluated_classes(splits["train"], scheme)

    predictions = {}
    enc_ckpt, enc_metrics = pipeline.fine_tune(
        splits["train"], splits["validation"], scheme, table, base, model_config
    )
    enc_ckpt.save(work / "encoder_checkpoint")
    predictions["encoder"] = pipeline.predict(enc_ckpt, splits["test"])

    crf_ckpt, _ = pipeline.train_crf(
        splits["train"], splits["validation"], scheme, replace(base, kind="crf")
    )
    crf_ckpt.save(work / "crf_checkpoint")
    predictions["crf"] = pipeline.predict(crf_ckpt, splits["test"])

    predictions["random"] = evaluation.baseline_random(
        splits["test"], scheme, seed=args.seed, evaluated_ids=evaluated
    )
    majority = evaluation.majority_label(splits["train"], scheme)
    predictions["majority"] = evaluation.baseline_majority(splits["test"], majority)

    leaderboard = []
    for method, pred in predictions.items():
        counts = evaluation.confusion_counts(splits["test"], pred, scheme)
        report = evaluation.build_report(counts, scheme, evaluated)
        (work / f"report_{method}.json").write_text(
            evaluation.emit_report(report, counts, "json", scheme), encoding="utf-8"
        )
        leaderboard.append({
            "method": method,
            "macro_precision": report.macro_precision,
            "macro_recall": report.macro_recall,
            "macro_f1": report.macro_f1,
        })
    leaderboard.sort(key=lambda row: -row["macro_f1"])
    (work / "leaderboard.json").write_text(
        json.dumps(leaderboard, indent=2) + "\n", encoding="utf-8"
    )

    width = max(len(r["method"]) for r in leaderboard) + 2
    print(f"{'method':<{width}}{'macro P':>9}{'macro R':>9}{'macro F1':>9}")
    for row in leaderboard:
        print(f"{row['method']:<{width}}{row['macro_precision']:>9.4f}"
              f"{row['macro_recall']:>9.4f}{row['macro_f1']:>9.4f}")
    print(f"final encoder val F1: {enc_metrics[-1]['val_macro_f1']:.4f}")
    print(f"reports in {work}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
