#!/usr/bin/env python3
"""Convert standoff-annotated documents to the word-per-line TSV format.

Expects a directory of `<name>.txt` / `<name>.ann` pairs. Each .ann line
is `start<TAB>end<TAB>label` with character offsets into the .txt file;
words are whitespace tokens and take the label of the first overlapping
span, or N.A. Use this to adapt span-annotated corpora (the public
handover set ships per-record documents with span annotations) to the
toolkit's record format.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from handover_ie.corpus import (
    RecordSet,
    convert_standoff,
    load_scheme,
    serialize_records,
)


def read_spans(path: Path) -> list[tuple[int, int, str]]:
    spans = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{line_no}: expected start<TAB>end<TAB>label")
        spans.append((int(parts[0]), int(parts[1]), parts[2]))
    return spans


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--input-dir", required=True)
    parser.add_argument("--scheme", required=True, help="label scheme file (N.A. first)")
    parser.add_argument("--split", default="train",
                        choices=("train", "validation", "test"))
    parser.add_argument("--out", help="output TSV (default stdout)")
    args = parser.parse_args()

    scheme = load_scheme(Path(args.scheme).read_text(encoding="utf-8"))
    records = []
    for txt in sorted(Path(args.input_dir).glob("*.txt")):
        ann = txt.with_suffix(".ann")
        if not ann.exists():
            raise FileNotFoundError(f"missing annotation file {ann}")
        records.append(
            convert_standoff(txt.stem, txt.read_text(encoding="utf-8"),
                             read_spans(ann), scheme)
        )
    rs = RecordSet(split=args.split, records=tuple(records))
    text = serialize_records(rs, scheme)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
