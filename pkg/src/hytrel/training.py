"""Optimizer, pretraining loop, evaluation helpers, and checkpointing.

Training is a pure function of (corpus, config, seed): batch order and all
corruption streams are derived from counters rather than shared mutable RNG
state, so reruns and checkpoint resumes reproduce bit-identically in fp64.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .encoder import EncoderParams, ModelConfig, encode_tensors
from .errors import CheckpointError, NumericError
from .hypergraph import build_hypergraph
from .numerics import ParamStore, global_grad_norm
from .objectives import (HeadParams, contrastive_loss, contrastive_views,
                         corrupt_cells, corruption_scores, electra_loss, project, roc_auc)
from .seeding import TAG_BATCH_ORDER, TAG_CORRUPT, TAG_VIEWS, rng_from
from .tables import Table, Vocabulary

CHECKPOINT_MAGIC = b"HYTB"
CHECKPOINT_VERSION = 1

OBJECTIVES = ("electra", "contrastive")
PRECISIONS = {"fp32": np.float32, "fp64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "electra"
    batch_size: int = 32
    learning_rate: float = 1e-3
    warmup_ratio: float = 0.05
    epochs: int = 5
    weight_decay: float = 0.02
    seed: int = 0
    precision: str = "fp64"
    max_steps: int | None = None
    clip_norm: float | None = 1.0
    corruption_rate: float = 0.15
    view_mask_ratio: float = 0.3
    temperature: float = 0.007

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {tuple(PRECISIONS)}")
        if self.batch_size < 1 or self.epochs < 1 or self.learning_rate < 0:
            raise ValueError("batch_size/epochs must be >= 1 and learning_rate >= 0")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError("warmup_ratio must be in [0, 1)")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_json(self) -> dict:
        return {
            "objective": self.objective, "batch_size": self.batch_size,
            "learning_rate": self.learning_rate, "warmup_ratio": self.warmup_ratio,
            "epochs": self.epochs, "weight_decay": self.weight_decay, "seed": self.seed,
            "precision": self.precision, "max_steps": self.max_steps,
            "clip_norm": self.clip_norm, "corruption_rate": self.corruption_rate,
            "view_mask_ratio": self.view_mask_ratio, "temperature": self.temperature,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


class OptState:
    """Adam moment accumulators mirroring a ParamStore's layout."""

    def __init__(self, store: ParamStore):
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.step = 0


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warm-up over the first warmup_ratio of steps, then constant."""
    warmup = int(np.ceil(cfg.warmup_ratio * total_steps))
    if warmup > 0 and step < warmup:
        return cfg.learning_rate * (step + 1) / warmup
    return cfg.learning_rate


def adam_step(store: ParamStore, opt: OptState, lr: float, weight_decay: float = 0.0,
              clip_norm: float | None = None,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update with decoupled weight decay, reducing in canonical
    parameter order."""
    scale = 1.0
    if clip_norm is not None and clip_norm > 0:
        norm = global_grad_norm(store)
        if norm > clip_norm:
            scale = clip_norm / norm
    opt.step += 1
    t = opt.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, tensor in store.items():
        g = store.grad_of(name) * scale
        m = opt.m[name]
        v = opt.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            update = update + weight_decay * tensor.data
        tensor.data -= tensor.data.dtype.type(lr) * update.astype(tensor.data.dtype)


@dataclass
class PretrainModel:
    """Encoder plus pretraining heads sharing one parameter store."""

    store: ParamStore
    encoder: EncoderParams
    head: HeadParams
    vocab: Vocabulary

    @classmethod
    def create(cls, vocab: Vocabulary, model_cfg: ModelConfig, seed: int,
               dtype=np.float64) -> "PretrainModel":
        store = ParamStore(dtype)
        rng = rng_from(seed)
        encoder = EncoderParams.create(store, len(vocab), model_cfg, rng)
        head = HeadParams.create(store, model_cfg.hidden_dim, rng)
        return cls(store=store, encoder=encoder, head=head, vocab=vocab)

    @property
    def config(self) -> ModelConfig:
        return self.encoder.config


def _batch_loss(model: PretrainModel, batch: Sequence[Table], cfg: TrainConfig,
                step: int) -> ad.Tensor:
    if cfg.objective == "electra":
        logits, labels = [], []
        from .objectives import corruption_logits
        for idx, table in enumerate(batch):
            rng = rng_from(TAG_CORRUPT, cfg.seed, step, idx)
            record = corrupt_cells(table, cfg.corruption_rate, model.vocab, rng)
            enc = encode_tensors(record.table, model.encoder)
            logits.append(corruption_logits(enc, model.head))
            labels.append(record.labels)
        all_logits = ad.concat_rows(logits)
        all_labels = np.concatenate(labels).reshape(-1, 1)
        return ad.bce_with_logits_mean(all_logits, all_labels)
    view_a, view_b = [], []
    for idx, table in enumerate(batch):
        rng = rng_from(TAG_VIEWS, cfg.seed, step, idx)
        hg = build_hypergraph(table)
        hg_a, hg_b = contrastive_views(hg, cfg.view_mask_ratio, rng)
        view_a.append(encode_tensors(table, model.encoder, hg=hg_a))
        view_b.append(encode_tensors(table, model.encoder, hg=hg_b))
    return contrastive_loss(view_a, view_b, model.head, cfg.temperature)


def train_step(model: PretrainModel, batch: Sequence[Table], opt: OptState,
               cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Forward, backward, clip, Adam. Returns the batch loss."""
    model.store.zero_grad()
    loss = _batch_loss(model, batch, cfg, step)
    value = float(loss.data)
    if not np.isfinite(value):
        ids = ", ".join(t.id for t in batch)
        raise NumericError(f"non-finite loss at step {step} (tables: {ids})")
    loss.backward()
    adam_step(model.store, opt, lr_at(step, total_steps, cfg),
              weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    return value


@dataclass
class PretrainResult:
    model: PretrainModel
    opt: OptState
    loss_log: list[dict]
    checkpoints: list[Path] = field(default_factory=list)


def pretrain(tables: Sequence[Table], vocab: Vocabulary, model_cfg: ModelConfig,
             cfg: TrainConfig, out_dir: str | Path | None = None,
             model: PretrainModel | None = None) -> PretrainResult:
    """Run the pretraining loop; emits a checkpoint per epoch and a CSV loss
    log when ``out_dir`` is given."""
    if not tables:
        raise ValueError("pretraining corpus is empty")
    if model is None:
        model = PretrainModel.create(vocab, model_cfg, cfg.seed, dtype=cfg.dtype)
    opt = OptState(model.store)
    n = len(tables)
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = steps_per_epoch * cfg.epochs
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    log: list[dict] = []
    checkpoints: list[Path] = []
    step = 0
    for epoch in range(cfg.epochs):
        if step >= total_steps:
            break
        order = rng_from(TAG_BATCH_ORDER, cfg.seed, epoch).permutation(n)
        for b in range(steps_per_epoch):
            if step >= total_steps:
                break
            batch = [tables[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            lr = lr_at(step, total_steps, cfg)
            loss = train_step(model, batch, opt, cfg, step, total_steps)
            log.append({"step": step, "epoch": epoch, "loss": loss, "lr": lr})
            step += 1
        if out_path is not None:
            ckpt = out_path / f"checkpoint_epoch{epoch}.bin"
            save_checkpoint(ckpt, model, opt, cfg, step=step, epoch=epoch)
            checkpoints.append(ckpt)
    if out_path is not None:
        write_loss_log(out_path / "loss_log.csv", log)
    return PretrainResult(model=model, opt=opt, loss_log=log, checkpoints=checkpoints)


def write_loss_log(path: str | Path, log: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "loss", "lr"])
        for row in log:
            writer.writerow([row["step"], row["epoch"], repr(row["loss"]), repr(row["lr"])])


# ---------------------------------------------------------------------------
# Held-out evaluation used by the pretraining acceptance runs.
# ---------------------------------------------------------------------------

def corruption_auc(model: PretrainModel, tables: Sequence[Table], rate: float,
                   seed: int) -> float:
    """AUC of the corruption detector over all positions of held-out tables."""
    labels, scores = [], []
    for idx, table in enumerate(tables):
        rng = rng_from(TAG_CORRUPT, seed, 0xE7A1, idx)
        record = corrupt_cells(table, rate, model.vocab, rng)
        enc = encode_tensors(record.table, model.encoder)
        scores.append(corruption_scores(enc, model.head))
        labels.append(record.labels)
    return roc_auc(np.concatenate(labels), np.concatenate(scores))


def sibling_retrieval_top1(model: PretrainModel, tables: Sequence[Table], ratio: float,
                           seed: int) -> float:
    """Fraction of held-out tables whose view-A table representation ranks
    its own view-B sibling first among all view-B keys."""
    qs, ks = [], []
    for idx, table in enumerate(tables):
        rng = rng_from(TAG_VIEWS, seed, 0xE7A2, idx)
        hg = build_hypergraph(table)
        hg_a, hg_b = contrastive_views(hg, ratio, rng)
        enc_a = encode_tensors(table, model.encoder, hg=hg_a)
        enc_b = encode_tensors(table, model.encoder, hg=hg_b)
        qs.append(project(enc_a.table_state(), model.head).data[0])
        ks.append(project(enc_b.table_state(), model.head).data[0])
    q = np.asarray(qs)
    k = np.asarray(ks)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    k = k / np.linalg.norm(k, axis=1, keepdims=True)
    top1 = np.argmax(q @ k.T, axis=1)
    return float((top1 == np.arange(len(tables))).mean())


# ---------------------------------------------------------------------------
# Checkpoint format: magic "HYTB", u32 LE version, u32 LE header length,
# UTF-8 JSON header, then raw little-endian float arrays at the offsets the
# header's manifest records. Bitwise stable: save -> load -> save round-trips
# to identical bytes.
# ---------------------------------------------------------------------------

def _dtype_code(dtype) -> str:
    return {np.dtype(np.float32): "<f4", np.dtype(np.float64): "<f8"}[np.dtype(dtype)]


def save_checkpoint(path: str | Path, model: PretrainModel, opt: OptState,
                    cfg: TrainConfig, step: int, epoch: int) -> None:
    path = Path(path)
    arrays: list[tuple[str, np.ndarray]] = []
    for name, tensor in model.store.items():
        arrays.append((f"param:{name}", tensor.data))
    for name, _ in model.store.items():
        arrays.append((f"adam_m:{name}", opt.m[name]))
    for name, _ in model.store.items():
        arrays.append((f"adam_v:{name}", opt.v[name]))
    manifest = []
    offset = 0
    for name, arr in arrays:
        nbytes = arr.size * arr.dtype.itemsize
        manifest.append({"name": name, "shape": list(arr.shape),
                         "dtype": _dtype_code(arr.dtype), "offset": offset,
                         "nbytes": nbytes})
        offset += nbytes
    vocab = model.vocab
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.config.to_json(),
        "train_config": cfg.to_json(),
        "vocab": {"tokens": [vocab.token_of(i) for i in range(2, len(vocab))],
                  "counts": vocab.counts[2:]},
        "counters": {"step": step, "epoch": epoch, "opt_step": opt.step,
                     "rng_seed": cfg.seed},
        "manifest": manifest,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(CHECKPOINT_VERSION).tobytes())
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).tobytes())
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    model: PretrainModel
    opt: OptState
    train_config: TrainConfig
    step: int
    epoch: int


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file", offset=0)
    version = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (expected {CHECKPOINT_VERSION})",
            offset=4)
    header_len = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    if 12 + header_len > len(raw):
        raise CheckpointError(f"{path}: truncated header", offset=12)
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}", offset=12) from exc
    data_start = 12 + header_len
    model_cfg = ModelConfig.from_json(header["model_config"])
    train_cfg = TrainConfig.from_json(header["train_config"])
    vocab = Vocabulary(header["vocab"]["tokens"], header["vocab"]["counts"])

    blobs: dict[str, np.ndarray] = {}
    for entry in header["manifest"]:
        lo = data_start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(raw):
            raise CheckpointError(f"{path}: truncated array {entry['name']!r}", offset=lo)
        arr = np.frombuffer(raw[lo:hi], dtype=entry["dtype"]).reshape(entry["shape"]).copy()
        blobs[entry["name"]] = arr
    dtype = train_cfg.dtype
    store = ParamStore(dtype)
    encoder = None
    head = None
    for entry in header["manifest"]:
        name = entry["name"]
        if name.startswith("param:"):
            store.add(name[len("param:"):], blobs[name])
    encoder = EncoderParams(store, model_cfg)
    head = HeadParams(store)
    model = PretrainModel(store=store, encoder=encoder, head=head, vocab=vocab)
    opt = OptState(store)
    for name, _ in store.items():
        opt.m[name][...] = blobs[f"adam_m:{name}"]
        opt.v[name][...] = blobs[f"adam_v:{name}"]
    counters = header["counters"]
    opt.step = counters["opt_step"]
    return Checkpoint(model=model, opt=opt, train_config=train_cfg,
                      step=counters["step"], epoch=counters["epoch"])
