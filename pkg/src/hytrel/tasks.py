"""Fine-tuning heads, task datasets, and evaluation for the four downstream
tasks: column type annotation (cta), column pair relation annotation (cpa),
table type detection (ttd), and table similarity prediction (tsp)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import synthdata
from .autodiff import Tensor
from .encoder import EncodedTable, EncoderParams, ModelConfig, encode_tensors
from .errors import CorpusError
from .numerics import ParamStore
from .seeding import TAG_BATCH_ORDER, rng_from
from .tables import Table, TruncationLimits, Vocabulary, build_vocab, parse_table
from .training import OptState, adam_step, lr_at, TrainConfig

TASK_KINDS = ("cta", "cpa", "ttd", "tsp")


@dataclass
class TaskExample:
    """One labeled example; exactly the fields for ``kind`` are set."""

    table: Table
    kind: str
    column_labels: tuple[frozenset[int], ...] | None = None
    pairs: tuple[tuple[int, int], ...] | None = None
    pair_labels: tuple[frozenset[int], ...] | None = None
    table_label: int | None = None
    other: Table | None = None
    similar: int | None = None


@dataclass
class TaskSuite:
    kind: str
    examples: list[TaskExample]
    vocab: Vocabulary
    label_names: tuple[str, ...]


@dataclass
class Metrics:
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    accuracy: float | None = None

    def to_json(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1, "accuracy": self.accuracy}


# ---------------------------------------------------------------------------
# Heads
# ---------------------------------------------------------------------------

_HEAD_IN_MULT = {"cta": 1, "cpa": 2, "ttd": 1, "tsp": 4}


@dataclass
class TaskHead:
    store: ParamStore
    kind: str
    n_labels: int
    symmetric: bool = True
    prefix: str = "task."

    @classmethod
    def create(cls, store: ParamStore, kind: str, hidden_dim: int, n_labels: int,
               rng: np.random.Generator, symmetric: bool = True,
               prefix: str = "task.") -> "TaskHead":
        if kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {kind!r}")
        out = 1 if kind == "tsp" else n_labels
        store.add(prefix + "w", rng.normal(0.0, 0.02, (_HEAD_IN_MULT[kind] * hidden_dim, out)))
        store.add(prefix + "b", np.zeros((out,)))
        return cls(store=store, kind=kind, n_labels=n_labels, symmetric=symmetric,
                   prefix=prefix)

    @property
    def w(self) -> Tensor:
        return self.store.get(self.prefix + "w")

    @property
    def b(self) -> Tensor:
        return self.store.get(self.prefix + "b")


def cta_logits(enc: EncodedTable, head: TaskHead) -> Tensor:
    """One multi-label logit row per column, from its hyperedge state."""
    return ad.add(ad.matmul(enc.column_states(), head.w), head.b)


def cpa_logits(enc: EncodedTable, pairs: Sequence[tuple[int, int]], head: TaskHead) -> Tensor:
    """Multi-label logits for ordered column pairs (concatenated states)."""
    m = enc.hg.m
    for a, b in pairs:
        if not (0 <= a < m and 0 <= b < m):
            raise ValueError(f"column pair ({a}, {b}) out of range for m={m}")
        if a == b:
            raise ValueError(f"column pair ({a}, {a}) is degenerate")
    cols = enc.column_states()
    left = ad.gather_rows(cols, np.array([p[0] for p in pairs]))
    right = ad.gather_rows(cols, np.array([p[1] for p in pairs]))
    return ad.add(ad.matmul(ad.concat_cols([left, right]), head.w), head.b)


def ttd_logits(enc: EncodedTable, head: TaskHead) -> Tensor:
    """Class logits from the whole-table hyperedge state, shape (1, C)."""
    return ad.add(ad.matmul(enc.table_state(), head.w), head.b)


def _tsp_features(enc_a: EncodedTable, enc_b: EncodedTable) -> Tensor:
    return ad.concat_cols([enc_a.table_state(), enc_b.table_state(),
                           ad.mean_rows(enc_a.column_states()),
                           ad.mean_rows(enc_b.column_states())])


def tsp_logit(enc_a: EncodedTable, enc_b: EncodedTable, head: TaskHead) -> Tensor:
    """Similarity logit for a table pair; with the symmetric toggle the
    features are averaged over both pair orders."""
    feats = _tsp_features(enc_a, enc_b)
    if head.symmetric:
        feats = ad.scale(ad.add(feats, _tsp_features(enc_b, enc_a)), 0.5)
    return ad.add(ad.matmul(feats, head.w), head.b)


# ---------------------------------------------------------------------------
# Synthetic datasets
# ---------------------------------------------------------------------------

def _label_names(kind: str) -> tuple[str, ...]:
    return {
        "cta": tuple(synthdata.COLUMN_TYPES),
        "cpa": tuple(synthdata.RELATIONS),
        "ttd": tuple(synthdata.TABLE_CLASSES),
        "tsp": ("dissimilar", "similar"),
    }[kind]


def synth_dataset(kind: str, size: int, seed: int,
                  vocab: Vocabulary | None = None,
                  limits: TruncationLimits | None = None) -> TaskSuite:
    """Deterministic labeled dataset for one task kind.

    When no vocabulary is passed, one is built from the generated records
    themselves (plus nothing else), so the suite is self-contained.
    """
    if kind not in TASK_KINDS:
        raise ValueError(f"unknown task kind {kind!r}")
    if size < 1:
        raise ValueError("dataset size must be >= 1")
    records, payloads = synthdata.synth_task_records(kind, size, seed,
                                                     task_tag=TASK_KINDS.index(kind))
    flat_records = []
    for r in records:
        if isinstance(r, tuple):
            flat_records.extend(r)
        else:
            flat_records.append(r)
    if vocab is None:
        vocab = build_vocab(flat_records, 1024)
    limits = limits or TruncationLimits()
    examples = []
    for rec, payload in zip(records, payloads):
        if kind == "cta":
            table = parse_table(rec, vocab, limits)
            examples.append(TaskExample(table=table, kind=kind,
                                        column_labels=tuple(frozenset([k]) for k in payload)))
        elif kind == "cpa":
            table = parse_table(rec, vocab, limits)
            pairs, rels = payload
            examples.append(TaskExample(table=table, kind=kind, pairs=tuple(pairs),
                                        pair_labels=tuple(frozenset([r]) for r in rels)))
        elif kind == "ttd":
            table = parse_table(rec, vocab, limits)
            examples.append(TaskExample(table=table, kind=kind, table_label=payload))
        else:
            ta = parse_table(rec[0], vocab, limits)
            tb = parse_table(rec[1], vocab, limits)
            examples.append(TaskExample(table=ta, kind=kind, other=tb, similar=payload))
    return TaskSuite(kind=kind, examples=examples, vocab=vocab,
                     label_names=_label_names(kind))


# ---------------------------------------------------------------------------
# Predictions and evaluation
# ---------------------------------------------------------------------------

@dataclass
class TaskModel:
    store: ParamStore
    encoder: EncoderParams
    head: TaskHead
    vocab: Vocabulary
    kind: str

    @classmethod
    def create(cls, vocab: Vocabulary, model_cfg: ModelConfig, kind: str, n_labels: int,
               seed: int, dtype=np.float64,
               pretrained: dict[str, np.ndarray] | None = None) -> "TaskModel":
        store = ParamStore(dtype)
        rng = rng_from(seed)
        encoder = EncoderParams.create(store, len(vocab), model_cfg, rng)
        head = TaskHead.create(store, kind, model_cfg.hidden_dim, n_labels, rng)
        if pretrained is not None:
            for name, tensor in store.items():
                if name in pretrained and pretrained[name].shape == tensor.data.shape:
                    tensor.data[...] = pretrained[name].astype(store.dtype)
        return cls(store=store, encoder=encoder, head=head, vocab=vocab, kind=kind)


def example_loss(model: TaskModel, ex: TaskExample) -> Tensor:
    enc = encode_tensors(ex.table, model.encoder)
    if ex.kind == "cta":
        logits = cta_logits(enc, model.head)
        labels = _sets_to_matrix(ex.column_labels, model.head.n_labels)
        return ad.bce_with_logits_mean(logits, labels)
    if ex.kind == "cpa":
        logits = cpa_logits(enc, ex.pairs, model.head)
        labels = _sets_to_matrix(ex.pair_labels, model.head.n_labels)
        return ad.bce_with_logits_mean(logits, labels)
    if ex.kind == "ttd":
        return ad.cross_entropy_mean(ttd_logits(enc, model.head), np.array([ex.table_label]))
    enc_b = encode_tensors(ex.other, model.encoder)
    logit = tsp_logit(enc, enc_b, model.head)
    return ad.bce_with_logits_mean(logit, np.array([[float(ex.similar)]]))


def _sets_to_matrix(labels: Sequence[frozenset[int]], n_labels: int) -> np.ndarray:
    out = np.zeros((len(labels), n_labels))
    for i, s in enumerate(labels):
        for lab in s:
            out[i, lab] = 1.0
    return out


def predict_example(model: TaskModel, ex: TaskExample, threshold: float = 0.5):
    """Decision-level predictions: label sets for cta/cpa, a class index for
    ttd, a binary flag for tsp."""
    enc = encode_tensors(ex.table, model.encoder)
    if ex.kind == "cta":
        z = cta_logits(enc, model.head).data
        return [frozenset(np.flatnonzero(_sigmoid(row) > threshold).tolist()) for row in z]
    if ex.kind == "cpa":
        z = cpa_logits(enc, ex.pairs, model.head).data
        return [frozenset(np.flatnonzero(_sigmoid(row) > threshold).tolist()) for row in z]
    if ex.kind == "ttd":
        return int(np.argmax(ttd_logits(enc, model.head).data[0]))
    enc_b = encode_tensors(ex.other, model.encoder)
    return int(tsp_logit(enc, enc_b, model.head).data[0, 0] > 0.0)


def prediction_scores(model: TaskModel, ex: TaskExample):
    """Raw per-label scores for the predictions JSONL export."""
    enc = encode_tensors(ex.table, model.encoder)
    if ex.kind == "cta":
        return _sigmoid(cta_logits(enc, model.head).data).tolist()
    if ex.kind == "cpa":
        return _sigmoid(cpa_logits(enc, ex.pairs, model.head).data).tolist()
    if ex.kind == "ttd":
        z = ttd_logits(enc, model.head).data[0]
        e = np.exp(z - z.max())
        return (e / e.sum()).tolist()
    enc_b = encode_tensors(ex.other, model.encoder)
    return float(_sigmoid(tsp_logit(enc, enc_b, model.head).data[0, 0]))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def evaluate(predictions: Sequence, gold: Sequence, kind: str) -> Metrics:
    """Micro-averaged precision/recall/F1 over label instances (cta, cpa,
    tsp) or plain accuracy (ttd)."""
    if len(predictions) != len(gold):
        raise ValueError(f"{len(predictions)} predictions vs {len(gold)} gold items")
    if kind == "ttd":
        hits = sum(int(p == g) for p, g in zip(predictions, gold))
        return Metrics(accuracy=hits / len(gold))
    if kind == "tsp":
        predictions = [frozenset([1]) if p else frozenset() for p in predictions]
        gold = [frozenset([1]) if g else frozenset() for g in gold]
    tp = fp = fn = 0
    for pred_sets, gold_sets in zip(predictions, gold):
        if isinstance(pred_sets, frozenset):
            pred_sets, gold_sets = [pred_sets], [gold_sets]
        if len(pred_sets) != len(gold_sets):
            raise ValueError("prediction/gold unit counts differ within an example")
        for p, g in zip(pred_sets, gold_sets):
            tp += len(p & g)
            fp += len(p - g)
            fn += len(g - p)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(precision=precision, recall=recall, f1=f1)


def gold_of(ex: TaskExample):
    if ex.kind == "cta":
        return list(ex.column_labels)
    if ex.kind == "cpa":
        return list(ex.pair_labels)
    if ex.kind == "ttd":
        return ex.table_label
    return ex.similar


def evaluate_model(model: TaskModel, examples: Sequence[TaskExample]) -> Metrics:
    preds = [predict_example(model, ex) for ex in examples]
    gold = [gold_of(ex) for ex in examples]
    return evaluate(preds, gold, model.kind)


# ---------------------------------------------------------------------------
# Fine-tuning loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    warmup_ratio: float = 0.05
    weight_decay: float = 0.02
    seed: int = 0
    precision: str = "fp64"
    clip_norm: float | None = 1.0

    @property
    def dtype(self):
        return {"fp32": np.float32, "fp64": np.float64}[self.precision]


@dataclass
class FinetuneResult:
    model: TaskModel
    history: list[dict] = field(default_factory=list)
    best_metrics: Metrics | None = None
    best_epoch: int = -1


def finetune(model: TaskModel, train: Sequence[TaskExample],
             held_out: Sequence[TaskExample], cfg: FinetuneConfig) -> FinetuneResult:
    """Joint training of encoder and task head; evaluates after each epoch
    and keeps the best epoch's metrics."""
    if not train:
        raise ValueError("empty training set")
    opt = OptState(model.store)
    n = len(train)
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = steps_per_epoch * cfg.epochs
    sched = TrainConfig(objective="electra", batch_size=cfg.batch_size,
                        learning_rate=cfg.learning_rate, warmup_ratio=cfg.warmup_ratio,
                        epochs=cfg.epochs, weight_decay=cfg.weight_decay,
                        seed=cfg.seed, precision=cfg.precision, clip_norm=cfg.clip_norm)
    result = FinetuneResult(model=model)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng_from(TAG_BATCH_ORDER, cfg.seed, 0xF1E, epoch).permutation(n)
        for b in range(steps_per_epoch):
            batch = [train[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            model.store.zero_grad()
            loss = ad.scale(ad.sum_tensors([example_loss(model, ex) for ex in batch]),
                            1.0 / len(batch))
            value = float(loss.data)
            loss.backward()
            adam_step(model.store, opt, lr_at(step, total_steps, sched),
                      weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
            step += 1
        metrics = evaluate_model(model, held_out)
        score = metrics.accuracy if model.kind == "ttd" else metrics.f1
        result.history.append({"epoch": epoch, "loss": value, **metrics.to_json()})
        best = (result.best_metrics.accuracy if model.kind == "ttd" else result.best_metrics.f1) \
            if result.best_metrics is not None else -1.0
        if score > best:
            result.best_metrics = metrics
            result.best_epoch = epoch
    return result


# ---------------------------------------------------------------------------
# Sidecar label files and prediction export
# ---------------------------------------------------------------------------

def write_labels(suite: TaskSuite, path: str | Path) -> None:
    """Labels sidecar JSONL: one {table_id, task, targets} object per
    example."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in suite.examples:
            if ex.kind == "cta":
                targets = [sorted(s) for s in ex.column_labels]
            elif ex.kind == "cpa":
                targets = {"pairs": [list(p) for p in ex.pairs],
                           "labels": [sorted(s) for s in ex.pair_labels]}
            elif ex.kind == "ttd":
                targets = ex.table_label
            else:
                targets = {"other": ex.other.id, "label": ex.similar}
            fh.write(json.dumps({"table_id": ex.table.id, "task": ex.kind,
                                 "targets": targets}) + "\n")


def load_labeled_dataset(tables: dict[str, Table], labels_path: str | Path,
                         kind: str, vocab: Vocabulary,
                         label_names: tuple[str, ...] | None = None) -> TaskSuite:
    """Join a parsed corpus with a labels sidecar into task examples."""
    examples = []
    with open(labels_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{labels_path}: bad JSON on line {line_no + 1}: {exc}") from exc
            if obj.get("task") != kind:
                continue
            tid = obj["table_id"]
            if tid not in tables:
                raise CorpusError(f"{labels_path}: unknown table id {tid!r} on line {line_no + 1}")
            table = tables[tid]
            targets = obj["targets"]
            if kind == "cta":
                examples.append(TaskExample(table=table, kind=kind,
                                            column_labels=tuple(frozenset(t) for t in targets)))
            elif kind == "cpa":
                examples.append(TaskExample(
                    table=table, kind=kind,
                    pairs=tuple(tuple(p) for p in targets["pairs"]),
                    pair_labels=tuple(frozenset(t) for t in targets["labels"])))
            elif kind == "ttd":
                examples.append(TaskExample(table=table, kind=kind, table_label=int(targets)))
            else:
                other_id = targets["other"]
                if other_id not in tables:
                    raise CorpusError(f"{labels_path}: unknown table id {other_id!r}")
                examples.append(TaskExample(table=table, kind=kind,
                                            other=tables[other_id],
                                            similar=int(targets["label"])))
    if not examples:
        raise CorpusError(f"{labels_path}: no examples for task {kind!r}")
    return TaskSuite(kind=kind, examples=examples, vocab=vocab,
                     label_names=label_names or _label_names(kind))


def write_predictions(model: TaskModel, examples: Sequence[TaskExample],
                      path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"table_id": ex.table.id, "task": ex.kind,
                                 "scores": prediction_scores(model, ex)}) + "\n")
