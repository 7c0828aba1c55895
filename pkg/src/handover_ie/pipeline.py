"""Training loops, hyperparameter search, checkpoint bundles, prediction.

A checkpoint directory is self-contained: weights, model and training
configuration, tokenizer files, and the label scheme, so prediction needs
nothing else. All randomness flows from the run seed, making checkpoints
and reports byte-identical across repeated runs.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import crf as crf_mod
from . import encoder as enc
from . import tensor as T
from .corpus import (
    LabelScheme,
    Record,
    RecordSet,
    dump_scheme,
    evaluated_classes,
    load_scheme,
)
from .encoder import CompatibilityError, EncoderModel, ModelConfig
from .evaluation import build_report, confusion_counts
from .tokenizer import (
    MergeTable,
    TokenizedSequence,
    align_labels,
    dump_merges,
    dump_vocab,
    encode as encode_words,
    load_table,
    train_bpe,
    word_frequencies,
)

SEED_ENV_VAR = "HANDOVER_IE_SEED"
MODEL_KINDS = ("encoder", "crf", "random", "majority")

DEFAULT_GRID_LEARNING_RATES = (5e-5, 3e-5, 2e-5)
DEFAULT_GRID_BATCH_SIZES = (8, 16)
DEFAULT_GRID_EPOCHS = (3, 4, 5)


@dataclass(frozen=True, slots=True)
class TrainConfig:
    kind: str = "encoder"
    learning_rate: float = 3e-5
    batch_size: int = 8
    epochs: int = 3
    seed: int = 0
    max_len: int = 128
    pretrained: str = ""
    num_merges: int = 200
    lowercase: bool = False
    weight_decay: float = 0.0
    l2_lambda: float = 1.0
    max_iters: int = 100
    grad_tol: float = 1e-5
    feature_cutoff: int = 1

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}")
        # zero is allowed so a null-update run stays expressible
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


_TRAIN_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_MODEL_FIELD_TYPES = {f.name: f.type for f in fields(ModelConfig)}


def _convert(type_name: str, value: str):
    if type_name == "bool":
        if value in ("True", "true", "1"):
            return True
        if value in ("False", "false", "0"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    return {"int": int, "float": float, "str": str}[type_name](value)


def parse_config_text(text: str) -> tuple[dict, dict]:
    """Split a flat key=value file into TrainConfig and ModelConfig kwargs."""
    train_kw: dict = {}
    model_kw: dict = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_no}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _TRAIN_FIELD_TYPES:
            train_kw[key] = _convert(_TRAIN_FIELD_TYPES[key], value)
        elif key in _MODEL_FIELD_TYPES:
            model_kw[key] = _convert(_MODEL_FIELD_TYPES[key], value)
        else:
            raise ValueError(f"config line {line_no}: unknown key {key!r}")
    return train_kw, model_kw


def load_train_config(path: str) -> tuple[TrainConfig, dict]:
    """Read a config file; HANDOVER_IE_SEED overrides the configured seed."""
    train_kw, model_kw = parse_config_text(Path(path).read_text(encoding="utf-8"))
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        train_kw["seed"] = int(env)
    return TrainConfig(**train_kw), model_kw


@dataclass
class Checkpoint:
    """Everything needed to predict: model + tokenizer + scheme + configs."""

    kind: str
    scheme: LabelScheme
    train_config: TrainConfig
    model_config: Optional[ModelConfig] = None
    model: Optional[EncoderModel] = None
    table: Optional[MergeTable] = None
    crf: Optional[crf_mod.CrfModel] = None

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        config_text = self.train_config.to_text()
        if self.model_config is not None:
            config_text += self.model_config.to_text()
        (d / "config.txt").write_text(config_text, encoding="utf-8")
        (d / "labels.txt").write_text(dump_scheme(self.scheme), encoding="utf-8")
        if self.kind == "encoder":
            (d / "merges.txt").write_text(dump_merges(self.table), encoding="utf-8")
            (d / "vocab.txt").write_text(dump_vocab(self.table), encoding="utf-8")
            enc.save_model(self.model, str(d / "model.tarch"))
        elif self.kind == "crf":
            crf_mod.save_crf(self.crf, str(d / "crf_features.tsv"), str(d / "crf_weights.tarch"))
        else:
            raise ValueError(f"cannot checkpoint model kind {self.kind!r}")

    @classmethod
    def load(cls, directory: str | Path) -> "Checkpoint":
        d = Path(directory)
        train_kw, model_kw = parse_config_text((d / "config.txt").read_text(encoding="utf-8"))
        train_config = TrainConfig(**train_kw)
        scheme = load_scheme((d / "labels.txt").read_text(encoding="utf-8"))
        if train_config.kind == "encoder":
            model_config = ModelConfig(**model_kw)
            if model_config.num_labels != len(scheme.labels):
                raise CompatibilityError(
                    f"config num_labels {model_config.num_labels} vs "
                    f"{len(scheme.labels)} scheme labels"
                )
            table = load_table(
                (d / "merges.txt").read_text(encoding="utf-8"),
                (d / "vocab.txt").read_text(encoding="utf-8"),
                lowercase=train_config.lowercase,
            )
            if len(table.pieces) != model_config.vocab_size:
                raise CompatibilityError(
                    f"vocab has {len(table.pieces)} pieces but config says "
                    f"{model_config.vocab_size}"
                )
            model = enc.load_model(model_config, str(d / "model.tarch"))
            return cls(
                kind="encoder", scheme=scheme, train_config=train_config,
                model_config=model_config, model=model, table=table,
            )
        if train_config.kind == "crf":
            crf = crf_mod.load_crf(
                str(d / "crf_features.tsv"), str(d / "crf_weights.tarch"),
                scheme, l2_lambda=train_config.l2_lambda,
            )
            return cls(kind="crf", scheme=scheme, train_config=train_config, crf=crf)
        raise ValueError(f"cannot load checkpoint of kind {train_config.kind!r}")


class Adam:
    """Adam with bias correction and decoupled optional weight decay."""

    def __init__(self, params: Sequence[T.Parameter], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


def _tokenize_set(records: RecordSet, table: MergeTable, max_len: int):
    """(sequence, aligned labels) pairs for every window of every record."""
    out: list[tuple[TokenizedSequence, list[int]]] = []
    for rec in records.records:
        for seq in encode_words(rec.words, table, max_len):
            lo, hi = seq.word_span
            labels, _ = align_labels(seq, rec.labels[lo:hi])
            out.append((seq, labels))
    return out


def _predict_encoder(model: EncoderModel, table: MergeTable, max_len: int,
                     records: RecordSet) -> RecordSet:
    out = []
    for rec in records.records:
        best: dict[int, tuple[int, int]] = {}   # word -> (distance, label)
        for seq in encode_words(rec.words, table, max_len):
            log_probs = enc.run_token_classifier(model, seq).data
            lo, hi = seq.word_span
            for w, pos in seq.first_subtoken_of.items():
                dist = min(w - lo, hi - 1 - w)
                if w not in best or dist > best[w][0]:
                    best[w] = (dist, int(log_probs[pos].argmax()))
        labels = tuple(best[w][1] for w in range(len(rec.words)))
        out.append(Record(id=rec.id, words=rec.words, labels=labels))
    return RecordSet(split=records.split, records=tuple(out))


def validation_macro_f1(pred: RecordSet, gold: RecordSet, scheme: LabelScheme,
                        evaluated: frozenset[int]) -> float:
    counts = confusion_counts(gold, pred, scheme)
    return build_report(counts, scheme, evaluated).macro_f1


def fine_tune(
    train: RecordSet,
    valid: RecordSet,
    scheme: LabelScheme,
    table: MergeTable,
    config: TrainConfig,
    model_config: ModelConfig,
) -> tuple[Checkpoint, list[dict]]:
    """Mini-batch Adam on the token cross-entropy; keeps the epoch with the
    best validation macro F1. Deterministic for a fixed seed."""
    if not train.records or not valid.records:
        raise ValueError("train and validation sets must be nonempty")
    if model_config.vocab_size != len(table.pieces):
        raise CompatibilityError("model vocab_size does not match the merge table")
    if model_config.num_labels != len(scheme.labels):
        raise CompatibilityError("model num_labels does not match the scheme")

    model = EncoderModel(model_config, seed=config.seed)
    if config.pretrained:
        entries = T.load_archive(config.pretrained)
        enc.load_weights(model, entries)
    rng = np.random.Generator(np.random.PCG64(config.seed + 1))
    optimizer = Adam(model.parameters(), lr=config.learning_rate,
                     weight_decay=config.weight_decay)
    windows = _tokenize_set(train, table, config.max_len)
    evaluated = evaluated_classes(train, scheme)

    best_f1 = -1.0
    best_state: list[np.ndarray] = [p.data.copy() for p in model.parameters()]
    metrics: list[dict] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(windows))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            model.zero_grad()
            for j in batch:
                seq, labels = windows[j]
                log_probs = enc.run_token_classifier(model, seq, train=True, rng=rng)
                loss = enc.token_loss(log_probs, labels)
                if not np.isfinite(loss.data):
                    raise crf_mod.TrainingDivergence(
                        f"non-finite loss at epoch {epoch}, batch start {start}"
                    )
                epoch_loss += float(loss.data)
                T.backward(loss, seed=1.0 / len(batch))
            optimizer.step()
        val_pred = _predict_encoder(model, table, config.max_len, valid)
        val_f1 = validation_macro_f1(val_pred, valid, scheme, evaluated)
        metrics.append({
            "epoch": epoch,
            "train_loss": epoch_loss / max(len(windows), 1),
            "val_macro_f1": val_f1,
        })
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_state = [p.data.copy() for p in model.parameters()]
    for p, data in zip(model.parameters(), best_state):
        p.data = data
        p.grad = np.zeros_like(data)
    checkpoint = Checkpoint(
        kind="encoder", scheme=scheme, train_config=config,
        model_config=model_config, model=model, table=table,
    )
    return checkpoint, metrics


def train_crf(
    train: RecordSet,
    valid: RecordSet,
    scheme: LabelScheme,
    config: TrainConfig,
) -> tuple[Checkpoint, list[dict]]:
    """Quasi-Newton CRF fit; validation macro F1 reported once at the end."""
    model = crf_mod.CrfModel.build(
        train, scheme, l2_lambda=config.l2_lambda, feature_cutoff=config.feature_cutoff
    )
    settings = crf_mod.OptimizerSettings(max_iters=config.max_iters, grad_tol=config.grad_tol)
    fitted, history = crf_mod.train(model, train, settings)
    checkpoint = Checkpoint(kind="crf", scheme=scheme, train_config=config, crf=fitted)
    metrics = [{"epoch": 0, "train_loss": history[-1], "val_macro_f1": None}]
    if valid.records:
        pred = predict(checkpoint, valid)
        metrics[0]["val_macro_f1"] = validation_macro_f1(
            pred, valid, scheme, evaluated_classes(train, scheme)
        )
    return checkpoint, metrics


def train_model(
    train: RecordSet,
    valid: RecordSet,
    scheme: LabelScheme,
    config: TrainConfig,
    model_config: Optional[ModelConfig] = None,
    table: Optional[MergeTable] = None,
) -> tuple[Checkpoint, list[dict]]:
    if config.kind == "encoder":
        if table is None:
            freqs = word_frequencies((r.words for r in train.records),
                                     lowercase=config.lowercase)
            table = train_bpe(freqs, config.num_merges, lowercase=config.lowercase)
        if model_config is None:
            raise ValueError("encoder training requires a model configuration")
        model_config = replace(
            model_config,
            vocab_size=len(table.pieces),
            num_labels=len(scheme.labels),
            max_positions=max(model_config.max_positions, config.max_len),
        )
        return fine_tune(train, valid, scheme, table, config, model_config)
    if config.kind == "crf":
        return train_crf(train, valid, scheme, config)
    raise ValueError(f"train_model cannot handle kind {config.kind!r}")


def predict(checkpoint: Checkpoint, records: RecordSet) -> RecordSet:
    """Label records word-for-word; inference is dropout-free."""
    for rec in records.records:
        for lab in rec.labels:
            if not 0 <= lab < len(checkpoint.scheme.labels):
                raise CompatibilityError(
                    f"record {rec.id!r} carries label id {lab} outside the checkpoint scheme"
                )
    if not records.records:
        return RecordSet(split=records.split, records=())
    if checkpoint.kind == "encoder":
        return _predict_encoder(
            checkpoint.model, checkpoint.table, checkpoint.train_config.max_len, records
        )
    if checkpoint.kind == "crf":
        out = [
            Record(id=r.id, words=r.words,
                   labels=tuple(crf_mod.predict_labels(checkpoint.crf, r.words)))
            for r in records.records
        ]
        return RecordSet(split=records.split, records=tuple(out))
    raise ValueError(f"cannot predict with model kind {checkpoint.kind!r}")


def grid_search(
    grid: Sequence[TrainConfig],
    train: RecordSet,
    valid: RecordSet,
    scheme: LabelScheme,
    model_config: Optional[ModelConfig] = None,
    table: Optional[MergeTable] = None,
) -> tuple[TrainConfig, list[dict]]:
    """Evaluate every config; ties go to smaller learning rate, then epochs."""
    if not grid:
        raise ValueError("empty hyperparameter grid")
    rows = []
    for i, config in enumerate(grid):
        _, metrics = train_model(train, valid, scheme, config, model_config, table)
        best = max((m["val_macro_f1"] or 0.0) for m in metrics)
        rows.append({"config": config, "val_macro_f1": best, "order": i})
    rows.sort(key=lambda r: (-r["val_macro_f1"], r["config"].learning_rate,
                             r["config"].epochs, r["order"]))
    leaderboard = [{"config": r["config"], "val_macro_f1": r["val_macro_f1"]} for r in rows]
    return rows[0]["config"], leaderboard


def default_grid(base: TrainConfig) -> list[TrainConfig]:
    return [
        replace(base, learning_rate=lr, batch_size=bs, epochs=ep)
        for lr in DEFAULT_GRID_LEARNING_RATES
        for bs in DEFAULT_GRID_BATCH_SIZES
        for ep in DEFAULT_GRID_EPOCHS
    ]
