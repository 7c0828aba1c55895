"""Word-level data model for handover-form sequence labeling.

Records are word sequences carrying one form-slot label per word. The
on-disk layout is CoNLL-style TSV: one ``word<TAB>label`` line per word,
a blank line between records, and an optional ``# id: <name>`` comment
line opening a record. Label names may carry a main-category prefix
(``MAIN CATEGORY/Subclass``) that drives per-category reporting; labels
without a recognized prefix are grouped under N.A.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

import numpy as np

MAIN_CATEGORIES = (
    "PATIENT INTRODUCTION",
    "MY SHIFT",
    "APPOINTMENTS",
    "MEDICATION",
    "FUTURE CARE",
)
NA_CATEGORY = "N.A."
SPLITS = ("train", "validation", "test")

_ID_COMMENT = "# id:"


class ParseError(ValueError):
    """Malformed record file; carries the 1-based offending line number."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class LabelingError(ValueError):
    """A label is not a member of the governing scheme."""


def _normalize_category(name: str) -> str:
    return re.sub(r"[\s_]+", " ", name).strip().upper()


_CATEGORY_LOOKUP = {_normalize_category(c): c for c in MAIN_CATEGORIES}


@dataclass(frozen=True, slots=True)
class LabelScheme:
    """Ordered label inventory with one designated N.A. label.

    Label ids are positions in ``labels``. A label spelled like
    ``CATEGORY/rest`` with a recognized category prefix belongs to that
    main category; everything else (including N.A. itself) maps to the
    N.A. category.
    """

    labels: tuple[str, ...]
    na_label: str = "N.A."

    def __post_init__(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate label names in scheme")
        if self.na_label not in self.labels:
            raise ValueError(f"N.A. label {self.na_label!r} missing from scheme")

    @classmethod
    def from_labels(cls, observed: Iterable[str], na_label: str = "N.A.") -> "LabelScheme":
        """Deterministic scheme from observed labels: N.A. first, rest sorted."""
        rest = sorted(set(observed) - {na_label})
        return cls(labels=(na_label, *rest), na_label=na_label)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LabelingError(f"unknown label {label!r}") from None

    @property
    def na_id(self) -> int:
        return self.labels.index(self.na_label)

    def main_category(self, label: str) -> str:
        if label == self.na_label or "/" not in label:
            return NA_CATEGORY
        prefix = _normalize_category(label.split("/", 1)[0])
        return _CATEGORY_LOOKUP.get(prefix, NA_CATEGORY)


@dataclass(frozen=True, slots=True)
class Record:
    """One handover document: words plus one label id per word."""

    id: str
    words: tuple[str, ...]
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.words) != len(self.labels):
            raise ValueError(
                f"record {self.id!r}: {len(self.words)} words vs {len(self.labels)} labels"
            )
        if not self.words:
            raise ValueError(f"record {self.id!r} is empty")


@dataclass(frozen=True, slots=True)
class RecordSet:
    split: str
    records: tuple[Record, ...]

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate record ids in set")

    def __len__(self) -> int:
        return len(self.records)


def validate_against_scheme(rs: RecordSet, scheme: LabelScheme) -> None:
    n = len(scheme.labels)
    for rec in rs.records:
        for lab in rec.labels:
            if not 0 <= lab < n:
                raise LabelingError(f"record {rec.id!r}: label id {lab} outside scheme")


def _iter_lines(stream: str | TextIO | Iterable[str]) -> Iterable[str]:
    if isinstance(stream, str):
        return stream.splitlines()
    return (line.rstrip("\n") for line in stream)


def parse_records(
    stream: str | TextIO | Iterable[str],
    scheme: Optional[LabelScheme] = None,
    split: str = "train",
) -> tuple[RecordSet, LabelScheme]:
    """Parse TSV records; build a scheme from observed labels when none given.

    Raises ParseError (with line number) for structurally bad lines and
    LabelingError for labels outside a fixed scheme.
    """
    raw: list[tuple[str | None, list[str], list[str]]] = []
    pending_id: str | None = None
    words: list[str] = []
    names: list[str] = []

    def flush() -> None:
        nonlocal pending_id, words, names
        if words:
            raw.append((pending_id, words, names))
        pending_id = None
        words, names = [], []

    line_no = 0
    for line in _iter_lines(stream):
        line_no += 1
        if line == "":
            flush()
            continue
        if "\t" not in line:
            if line.startswith(_ID_COMMENT):
                if words:
                    raise ParseError("id comment inside a record", line_no)
                pending_id = line[len(_ID_COMMENT):].strip()
                continue
            raise ParseError(f"expected 2 tab-separated columns, got 1: {line!r}", line_no)
        cols = line.split("\t")
        if len(cols) != 2:
            raise ParseError(f"expected 2 tab-separated columns, got {len(cols)}", line_no)
        word, label = cols
        if not word:
            raise ParseError("empty word field", line_no)
        if not label:
            raise ParseError("empty label field", line_no)
        words.append(word)
        names.append(label)
    flush()
    if pending_id is not None:
        raise ParseError("id comment for an empty record", line_no)

    if scheme is None:
        observed = {name for _, _, labs in raw for name in labs}
        scheme = LabelScheme.from_labels(observed | {"N.A."})

    records = []
    for i, (rid, ws, labs) in enumerate(raw):
        records.append(
            Record(
                id=rid if rid is not None else f"r{i:04d}",
                words=tuple(ws),
                labels=tuple(scheme.index(name) for name in labs),
            )
        )
    return RecordSet(split=split, records=tuple(records)), scheme


def serialize_records(rs: RecordSet, scheme: LabelScheme) -> str:
    """Inverse of parse_records; blank line terminates every record."""
    out = []
    for rec in rs.records:
        out.append(f"{_ID_COMMENT} {rec.id}\n")
        for word, lab in zip(rec.words, rec.labels):
            out.append(f"{word}\t{scheme.labels[lab]}\n")
        out.append("\n")
    return "".join(out)


def load_scheme(text: str) -> LabelScheme:
    """One label per line; the first line is the N.A. label."""
    labels = [line for line in text.splitlines() if line]
    if not labels:
        raise ValueError("empty label scheme file")
    return LabelScheme(labels=tuple(labels), na_label=labels[0])


def dump_scheme(scheme: LabelScheme) -> str:
    ordered = [scheme.na_label] + [l for l in scheme.labels if l != scheme.na_label]
    return "".join(line + "\n" for line in ordered)


def evaluated_classes(train: RecordSet, scheme: LabelScheme) -> frozenset[int]:
    """Label ids occurring at least once in the training set.

    This set parameterizes all macro averaging downstream.
    """
    validate_against_scheme(train, scheme)
    return frozenset(lab for rec in train.records for lab in rec.labels)


# --- synthetic corpus -------------------------------------------------------

_FILLER = (
    "the", "a", "patient", "is", "was", "on", "ward", "with", "stable",
    "obs", "at", "night", "plan", "home", "review", "today", "and",
)


def default_synthetic_scheme() -> LabelScheme:
    return LabelScheme(
        labels=("N.A.", "alpha", "bravo", "carol", "delta", "echo"),
        na_label="N.A.",
    )


def _cue_pool(label: str, idx: int, size: int = 4) -> list[str]:
    slug = re.sub(r"[^a-z0-9]+", "", label.lower()) or "cls"
    return [f"{slug}{idx}w{k}" for k in range(size)]


def generate_synthetic(n_records: int, scheme: LabelScheme, seed: int) -> RecordSet:
    """Deterministic synthetic corpus: per-class cue words plus N.A. filler.

    Non-N.A. classes draw cue words from disjoint pools with Zipf-like
    frequencies, so cue surface forms identify the class and simple
    learners can beat the trivial baselines. Every scheme label occurs
    at least once when n_records >= len(scheme.labels).
    """
    if n_records < 0:
        raise ValueError("n_records must be >= 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    na = scheme.na_id
    cue_ids = [i for i in range(len(scheme.labels)) if i != na]
    pools = {i: _cue_pool(scheme.labels[i], i) for i in cue_ids}
    zipf = np.array([1.0 / (k + 1) for k in range(len(cue_ids))])
    zipf /= zipf.sum() if len(cue_ids) else 1.0

    records = []
    for i in range(n_records):
        n = int(rng.integers(8, 21))
        words, labels = [], []
        for _ in range(n):
            if cue_ids and rng.random() < 0.45:
                cls = cue_ids[int(rng.choice(len(cue_ids), p=zipf))]
                words.append(pools[cls][int(rng.integers(len(pools[cls])))])
                labels.append(cls)
            else:
                words.append(_FILLER[int(rng.integers(len(_FILLER)))])
                labels.append(na)
        if i < len(scheme.labels) and i not in labels:
            pos = int(rng.integers(n))
            labels[pos] = i
            words[pos] = _FILLER[0] if i == na else pools[i][0]
        records.append(Record(id=f"synth-{i:04d}", words=tuple(words), labels=tuple(labels)))
    return RecordSet(split="train", records=tuple(records))


# --- standoff adapter -------------------------------------------------------

def convert_standoff(
    doc_id: str,
    text: str,
    spans: Iterable[tuple[int, int, str]],
    scheme: LabelScheme,
) -> Record:
    """Convert a raw document plus character-offset span annotations.

    Words are whitespace tokens; a word takes the label of the first
    (by start, then end) span overlapping its character range, else N.A.
    """
    ordered = sorted(spans, key=lambda s: (s[0], s[1]))
    words, labels = [], []
    for m in re.finditer(r"\S+", text):
        s, e = m.span()
        label = scheme.na_label
        for a, b, name in ordered:
            if a < e and s < b:
                label = name
                break
        words.append(m.group())
        labels.append(scheme.index(label))
    if not words:
        raise ValueError(f"document {doc_id!r} has no words")
    return Record(id=doc_id, words=tuple(words), labels=tuple(labels))
