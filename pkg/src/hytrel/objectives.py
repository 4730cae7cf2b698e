"""Pretraining heads: corruption detection and contrastive alignment.

Corruption detection replaces a fraction of cell/header values with
frequency-sampled tokens and trains a binary classifier on every position.
The contrastive objective builds two structurally masked views of each
table's hypergraph and aligns their table/column representations with a
temperature-scaled softmax over in-batch negatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncodedTable, EncoderParams
from .hypergraph import Hypergraph, mask_connections
from .numerics import ParamStore
from .tables import Table, Vocabulary, UNK_ID, PAD_ID


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass
class CorruptionRecord:
    """A corrupted table plus per-position replacement flags.

    Positions enumerate the n*m cells in row-major order followed by the m
    headers; ``labels[p] == 1`` iff position p was replaced.
    """

    table: Table
    labels: np.ndarray
    positions: list[int]

    @property
    def n_cells(self) -> int:
        return self.table.n * self.table.m


class FrequencySampler:
    """Samples replacement tokens proportionally to corpus frequency."""

    def __init__(self, vocab: Vocabulary):
        counts = np.asarray(vocab.counts, dtype=np.float64)
        counts[PAD_ID] = 0.0
        counts[UNK_ID] = 0.0
        total = counts.sum()
        if total <= 0:
            raise ValueError("vocabulary has no counted tokens to sample from")
        self._ids = np.flatnonzero(counts > 0)
        self._cum = np.cumsum(counts[self._ids] / total)
        self._cum[-1] = 1.0
        # fallback scan order: most frequent first, ties by id
        self._by_freq = self._ids[np.lexsort((self._ids, -counts[self._ids]))]

    def draw(self, rng: np.random.Generator) -> int:
        return int(self._ids[np.searchsorted(self._cum, rng.random(), side="right")])

    def draw_different(self, original: tuple[int, ...], rng: np.random.Generator,
                       attempts: int = 16) -> tuple[int, ...]:
        """A single-token replacement guaranteed to differ from ``original``."""
        for _ in range(attempts):
            tok = (self.draw(rng),)
            if tok != original:
                return tok
        for t in self._by_freq:
            if (int(t),) != original:
                return (int(t),)
        return (UNK_ID,) if original != (UNK_ID,) else (PAD_ID,)


def corrupt_cells(table: Table, rate: float, vocab: Vocabulary,
                  rng: np.random.Generator) -> CorruptionRecord:
    """Replace ``round(rate * (n*m + m))`` distinct cell/header positions.

    Positions are chosen uniformly over cells and headers pooled together;
    replacements are frequency-sampled tokens, re-drawn on collision so a
    flagged position always really changed.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError(f"corruption rate must be in (0, 1), got {rate}")
    n, m = table.n, table.m
    total = n * m + m
    k = _round_half_up(rate * total)
    labels = np.zeros(total, dtype=np.int64)
    if k == 0:
        return CorruptionRecord(table=table, labels=labels, positions=[])
    sampler = FrequencySampler(vocab)
    positions = sorted(int(p) for p in rng.choice(total, size=k, replace=False))
    rows = [list(r) for r in table.rows]
    headers = list(table.headers)
    for p in positions:
        labels[p] = 1
        if p < n * m:
            i, j = divmod(p, m)
            rows[i][j] = sampler.draw_different(rows[i][j], rng)
        else:
            j = p - n * m
            headers[j] = sampler.draw_different(headers[j], rng)
    corrupted = Table(id=table.id, caption=table.caption, headers=tuple(headers),
                      rows=tuple(tuple(r) for r in rows))
    return CorruptionRecord(table=corrupted, labels=labels, positions=positions)


@dataclass
class HeadParams:
    """Pretraining head weights living inside a ParamStore."""

    store: ParamStore
    prefix: str = "head."

    @classmethod
    def create(cls, store: ParamStore, hidden_dim: int, rng: np.random.Generator,
               prefix: str = "head.") -> "HeadParams":
        store.add(prefix + "electra_w", rng.normal(0.0, 0.02, (hidden_dim, 1)))
        store.add(prefix + "electra_b", np.zeros((1,)))
        store.add(prefix + "proj_w", rng.normal(0.0, 0.02, (hidden_dim, hidden_dim)))
        store.add(prefix + "proj_b", np.zeros((hidden_dim,)))
        return cls(store, prefix)

    @property
    def electra_w(self) -> Tensor:
        return self.store.get(self.prefix + "electra_w")

    @property
    def electra_b(self) -> Tensor:
        return self.store.get(self.prefix + "electra_b")

    @property
    def proj_w(self) -> Tensor:
        return self.store.get(self.prefix + "proj_w")

    @property
    def proj_b(self) -> Tensor:
        return self.store.get(self.prefix + "proj_b")


def corruption_logits(enc: EncodedTable, head: HeadParams) -> Tensor:
    """Per-position logits: cells scored from node rows, headers from their
    column hyperedge rows. Shape (n*m + m, 1)."""
    scored = ad.concat_rows([enc.X, enc.column_states()])
    return ad.add(ad.matmul(scored, head.electra_w), head.electra_b)


def electra_loss(enc: EncodedTable, record: CorruptionRecord, head: HeadParams) -> Tensor:
    """Mean binary cross-entropy over all cell and header positions."""
    hg = enc.hg
    expected = hg.node_count + hg.m
    if record.labels.shape[0] != expected:
        raise ValueError(
            f"label count {record.labels.shape[0]} does not match table positions {expected}")
    logits = corruption_logits(enc, head)
    return ad.bce_with_logits_mean(logits, record.labels.reshape(-1, 1))


def contrastive_views(hg: Hypergraph, ratio: float,
                      rng: np.random.Generator) -> tuple[Hypergraph, Hypergraph]:
    """Two independently masked copies of the same hypergraph."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"view mask ratio must be in [0, 1), got {ratio}")
    child_a, child_b = rng.spawn(2)
    return mask_connections(hg, ratio, child_a), mask_connections(hg, ratio, child_b)


@dataclass
class ContrastiveBatch:
    """Row-aligned query/key representations; negatives are the other
    in-batch keys."""

    queries: Tensor
    keys: Tensor
    temperature: float = 0.007
    normalize: bool = True

    @property
    def size(self) -> int:
        return self.queries.data.shape[0]


def info_nce_per_query(batch: ContrastiveBatch) -> Tensor:
    """Per-query alignment losses, shape (B,).

    Query i is scored against every key; key i is the positive, the B-1
    others are the negatives. Returned on-tape for reduction by the caller.
    """
    if batch.temperature <= 0:
        raise ValueError("temperature must be positive")
    if batch.size < 2:
        raise ValueError("in-batch negatives require at least 2 pairs")
    q, k = batch.queries, batch.keys
    if batch.normalize:
        q = ad.l2_normalize_rows(q)
        k = ad.l2_normalize_rows(k)
    sims = ad.matmul(q, ad.transpose(k))
    logits = ad.scale(sims, 1.0 / batch.temperature)
    return ad.cross_entropy_rows(logits, np.arange(batch.size))


def info_nce(batch: ContrastiveBatch) -> Tensor:
    """Mean in-batch contrastive loss."""
    return ad.mean_all(info_nce_per_query(batch))


def project(reps: Tensor, head: HeadParams) -> Tensor:
    return ad.add(ad.matmul(reps, head.proj_w), head.proj_b)


def contrastive_loss(view_a: list[EncodedTable], view_b: list[EncodedTable],
                     head: HeadParams, temperature: float = 0.007,
                     normalize: bool = True) -> Tensor:
    """Alignment loss over table units and column units.

    Each table hyperedge and each column hyperedge is one instance whose
    positive is the same hyperedge in the sibling view; negatives are the
    other in-batch instances of the same kind. Kinds with fewer than two
    instances contribute nothing.
    """
    if len(view_a) != len(view_b):
        raise ValueError("views must pair up")
    tab_q = ad.concat_rows([e.table_state() for e in view_a])
    tab_k = ad.concat_rows([e.table_state() for e in view_b])
    col_q = ad.concat_rows([e.column_states() for e in view_a])
    col_k = ad.concat_rows([e.column_states() for e in view_b])
    terms = []
    for q, k in ((tab_q, tab_k), (col_q, col_k)):
        if q.data.shape[0] >= 2:
            batch = ContrastiveBatch(queries=project(q, head), keys=project(k, head),
                                     temperature=temperature, normalize=normalize)
            terms.append(info_nce_per_query(batch))
    if not terms:
        raise ValueError("contrastive loss needs at least 2 instances of one unit kind")
    return ad.mean_all(ad.concat_rows([ad.reshape(t, (-1, 1)) for t in terms]))


def corruption_scores(enc: EncodedTable, head: HeadParams) -> np.ndarray:
    """Detached per-position corruption probabilities."""
    z = corruption_logits(enc, head).data[:, 0]
    return 1.0 / (1.0 + np.exp(-z))


def roc_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Rank-statistic AUC with tie averaging."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(labels.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
