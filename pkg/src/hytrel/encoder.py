"""Hypergraph encoder: embedding initialization and stacked set-attention
layers.

One layer is three steps: pool member node features into each hyperedge
with learned-query set attention, fuse the pooled summary with the
hyperedge's previous state through an MLP, then pool the updated hyperedge
states back into each node with a second set-attention block. Because both
pooling directions are attention over unordered sets, the whole encoder is
invariant to independent row and column permutations of the input table up
to float rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hypergraph import Hypergraph, build_hypergraph
from .numerics import ParamStore
from .seeding import TAG_ROW_INIT, table_rng
from .tables import Table


@dataclass(frozen=True)
class ModelConfig:
    """Encoder shape. ``ffn_dim`` defaults to 4x the hidden width.

    ``row_init_mode`` picks how row-hyperedge states start out:
    ``per_table`` draws one vector per table (seeded by the table id and
    shared by all of that table's row edges, so permuted copies of a table
    see identical values); ``shared`` uses a single learned vector instead.
    """

    hidden_dim: int = 64
    heads: int = 4
    layers: int = 2
    ffn_dim: int | None = None
    dropout: float = 0.0
    row_init_mode: str = "per_table"
    row_init_std: float = 0.02
    emb_init_std: float = 0.02
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.hidden_dim % self.heads != 0:
            raise ValueError("hidden_dim must be divisible by heads")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.row_init_mode not in ("per_table", "shared"):
            raise ValueError(f"unknown row_init_mode {self.row_init_mode!r}")

    @property
    def inner_dim(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.hidden_dim

    def to_json(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim, "heads": self.heads, "layers": self.layers,
            "ffn_dim": self.ffn_dim, "dropout": self.dropout,
            "row_init_mode": self.row_init_mode, "row_init_std": self.row_init_std,
            "emb_init_std": self.emb_init_std, "ln_eps": self.ln_eps,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


@dataclass
class HyperAttBlock:
    """Learnable pieces of one set-attention block."""

    omega: Tensor
    w_k: Tensor
    w_v: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class FusionBlock:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


_BLOCK_FIELDS = ("omega", "w_k", "w_v", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
                 "ln1_g", "ln1_b", "ln2_g", "ln2_b")


class EncoderParams:
    """View over the named encoder parameters inside a ParamStore.

    Per-head query/key/value weights are stored concatenated: the query
    vector has shape (F,) and the key/value projections (F, F); head h owns
    the h-th contiguous column block of width F/heads.
    """

    def __init__(self, store: ParamStore, config: ModelConfig, prefix: str = "enc."):
        self.store = store
        self.config = config
        self.prefix = prefix

    @classmethod
    def create(cls, store: ParamStore, vocab_size: int, config: ModelConfig,
               rng: np.random.Generator, prefix: str = "enc.") -> "EncoderParams":
        f, inner = config.hidden_dim, config.inner_dim
        std = config.emb_init_std

        def w(name, shape, scale=std):
            store.add(prefix + name, rng.normal(0.0, scale, shape))

        def zeros(name, shape):
            store.add(prefix + name, np.zeros(shape))

        def ones(name, shape):
            store.add(prefix + name, np.ones(shape))

        w("tok_emb", (vocab_size, f))
        w("row_init", (1, f), scale=config.row_init_std)
        for layer in range(config.layers):
            for direction in ("n2e", "e2n"):
                base = f"layer{layer}.{direction}."
                w(base + "omega", (f,))
                w(base + "w_k", (f, f))
                w(base + "w_v", (f, f))
                w(base + "ffn_w1", (f, inner))
                zeros(base + "ffn_b1", (inner,))
                w(base + "ffn_w2", (inner, f))
                zeros(base + "ffn_b2", (f,))
                ones(base + "ln1_g", (f,))
                zeros(base + "ln1_b", (f,))
                ones(base + "ln2_g", (f,))
                zeros(base + "ln2_b", (f,))
            base = f"layer{layer}.fuse."
            w(base + "w1", (2 * f, f))
            zeros(base + "b1", (f,))
            w(base + "w2", (f, f))
            zeros(base + "b2", (f,))
        return cls(store, config, prefix)

    def _get(self, name: str) -> Tensor:
        return self.store.get(self.prefix + name)

    @property
    def tok_emb(self) -> Tensor:
        return self._get("tok_emb")

    @property
    def row_init(self) -> Tensor:
        return self._get("row_init")

    @property
    def vocab_size(self) -> int:
        return self.tok_emb.data.shape[0]

    def block(self, layer: int, direction: str) -> HyperAttBlock:
        base = f"layer{layer}.{direction}."
        return HyperAttBlock(**{k: self._get(base + k) for k in _BLOCK_FIELDS})

    def fusion(self, layer: int) -> FusionBlock:
        base = f"layer{layer}.fuse."
        return FusionBlock(**{k: self._get(base + k) for k in ("w1", "b1", "w2", "b2")})


@dataclass
class GraphState:
    """Node features X (|V| x F) and hyperedge states S (|E| x F) after
    ``t`` layers."""

    X: np.ndarray
    S: np.ndarray
    t: int
    hg: Hypergraph | None = None

    def column_reps(self) -> np.ndarray:
        return self.S[: self.hg.m]

    def row_reps(self) -> np.ndarray:
        return self.S[self.hg.m: self.hg.m + self.hg.n]

    def table_rep(self) -> np.ndarray:
        return self.S[self.hg.table_edge]

    def cell_rep(self, i: int, j: int) -> np.ndarray:
        return self.X[i * self.hg.m + j]


@dataclass
class EncodedTable:
    """On-tape encoder output, used by training heads."""

    hg: Hypergraph
    X: Tensor
    S: Tensor

    def detach(self, t: int) -> GraphState:
        return GraphState(X=self.X.data.copy(), S=self.S.data.copy(), t=t, hg=self.hg)

    def column_states(self) -> Tensor:
        return ad.gather_rows(self.S, np.arange(self.hg.m))

    def table_state(self) -> Tensor:
        return ad.gather_rows(self.S, np.array([self.hg.table_edge]))


def _token_mean(emb: Tensor, token_groups: Iterable[tuple[int, ...]], count: int,
                dtype) -> Tensor:
    """Mean of token embedding rows per group; empty groups give zero rows."""
    tok_ids: list[int] = []
    seg: list[int] = []
    inv = np.zeros((count, 1), dtype=dtype)
    for g, toks in enumerate(token_groups):
        if toks:
            tok_ids.extend(toks)
            seg.extend([g] * len(toks))
            inv[g, 0] = 1.0 / len(toks)
    if not tok_ids:
        return ad.constant(np.zeros((count, emb.data.shape[1]), dtype=dtype))
    gathered = ad.gather_rows(emb, np.array(tok_ids, dtype=np.int64))
    summed = ad.segment_sum(gathered, np.array(seg, dtype=np.int64), count)
    return ad.mul(summed, ad.constant(inv))


def _row_init_tensor(params: EncoderParams, table: Table,
                     rng: np.random.Generator | None) -> Tensor:
    cfg = params.config
    if cfg.row_init_mode == "shared":
        return params.row_init
    rng = rng if rng is not None else table_rng(TAG_ROW_INIT, table.id)
    draw = rng.normal(0.0, cfg.row_init_std, (1, cfg.hidden_dim))
    return ad.constant(draw.astype(params.store.dtype))


def _init_state_tensors(hg: Hypergraph, params: EncoderParams,
                        row_rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    dtype = params.store.dtype
    table = hg.table
    x = _token_mean(params.tok_emb, (table.rows[i][j] for i in range(hg.n) for j in range(hg.m)),
                    hg.node_count, dtype)
    cols = _token_mean(params.tok_emb, table.headers, hg.m, dtype)
    rows = ad.tile_rows(_row_init_tensor(params, table, row_rng), hg.n)
    tab = _token_mean(params.tok_emb, [table.caption], 1, dtype)
    return x, ad.concat_rows([cols, rows, tab])


def init_embeddings(hg: Hypergraph, params: EncoderParams,
                    rng: np.random.Generator | None = None) -> GraphState:
    """Initial node/hyperedge states: token means for cells, headers, and
    the caption; a single randomly drawn (or learned) vector for row edges."""
    x, s = _init_state_tensors(hg, params, row_rng=rng)
    return GraphState(X=x.data.copy(), S=s.data.copy(), t=0, hg=hg)


def _hyperatt(block: HyperAttBlock, items: Tensor, seg: np.ndarray, num_segments: int,
              cfg: ModelConfig, drop_rng: np.random.Generator | None = None) -> Tensor:
    """Set-attention block: learned-query pooling, query residual, LN, FFN,
    second residual, LN."""
    pooled = ad.multihead_set_pool(items, block.omega, block.w_k, block.w_v,
                                   seg, num_segments, cfg.heads)
    y = ad.layer_norm_rows(ad.add(pooled, block.omega), block.ln1_g, block.ln1_b, cfg.ln_eps)
    hidden = ad.relu(ad.add(ad.matmul(y, block.ffn_w1), block.ffn_b1))
    if drop_rng is not None and cfg.dropout > 0.0:
        hidden = ad.dropout(hidden, cfg.dropout, drop_rng)
    ffn_out = ad.add(ad.matmul(hidden, block.ffn_w2), block.ffn_b2)
    return ad.layer_norm_rows(ad.add(y, ffn_out), block.ln2_g, block.ln2_b, cfg.ln_eps)


def set_attention(block: HyperAttBlock, members: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Pool one unordered member set (k x F) into a single F-vector."""
    members = np.asarray(members)
    if members.ndim != 2 or members.shape[0] == 0:
        raise ValueError("set_attention requires a non-empty (k, F) member matrix")
    seg = np.zeros(members.shape[0], dtype=np.int64)
    out = _hyperatt(block, ad.constant(members), seg, 1, cfg)
    return out.data[0].copy()


def _layer_tensors(x: Tensor, s: Tensor, hg: Hypergraph, params: EncoderParams,
                   layer: int, drop_rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    cfg = params.config
    # nodes -> hyperedges (mask repair guarantees every edge keeps a member)
    items = ad.gather_rows(x, hg.inc_edge_node)
    s_tilde = _hyperatt(params.block(layer, "n2e"), items, hg.inc_edge_seg,
                        hg.edge_count, cfg, drop_rng)
    # fuse previous edge state with the fresh aggregate
    fuse = params.fusion(layer)
    hidden = ad.relu(ad.add(ad.matmul(ad.concat_cols([s, s_tilde]), fuse.w1), fuse.b1))
    if drop_rng is not None and cfg.dropout > 0.0:
        hidden = ad.dropout(hidden, cfg.dropout, drop_rng)
    s_new = ad.add(ad.matmul(hidden, fuse.w2), fuse.b2)
    # hyperedges -> nodes; nodes that lost every incidence keep their state
    present = np.unique(hg.inc_node_seg)
    items2 = ad.gather_rows(s_new, hg.inc_node_edge)
    if present.size == hg.node_count:
        x_new = _hyperatt(params.block(layer, "e2n"), items2, hg.inc_node_seg,
                          hg.node_count, cfg, drop_rng)
    else:
        compact = np.searchsorted(present, hg.inc_node_seg)
        pooled = _hyperatt(params.block(layer, "e2n"), items2, compact,
                           present.size, cfg, drop_rng)
        x_new = ad.scatter_rows(x, present, pooled)
    return x_new, s_new


def hypertrans_layer(state: GraphState, hg: Hypergraph, params: EncoderParams,
                     layer: int = 0) -> GraphState:
    """Run one encoder layer over detached state arrays."""
    if state.X.shape[0] != hg.node_count or state.S.shape[0] != hg.edge_count:
        raise ValueError("state dimensions do not match the hypergraph")
    x, s = _layer_tensors(ad.constant(state.X), ad.constant(state.S), hg, params, layer)
    return GraphState(X=x.data.copy(), S=s.data.copy(), t=state.t + 1, hg=hg)


def encode_tensors(table: Table, params: EncoderParams, hg: Hypergraph | None = None,
                   row_rng: np.random.Generator | None = None,
                   drop_rng: np.random.Generator | None = None) -> EncodedTable:
    """Full on-tape forward pass (used by training objectives)."""
    hg = hg if hg is not None else build_hypergraph(table)
    x, s = _init_state_tensors(hg, params, row_rng)
    for layer in range(params.config.layers):
        x, s = _layer_tensors(x, s, hg, params, layer, drop_rng)
    return EncodedTable(hg=hg, X=x, S=s)


def encode(table: Table, params: EncoderParams, hg: Hypergraph | None = None,
           row_rng: np.random.Generator | None = None) -> GraphState:
    """Encode a table and return detached final representations."""
    enc = encode_tensors(table, params, hg=hg, row_rng=row_rng)
    return enc.detach(params.config.layers)


def export_embeddings(tables: Iterable[Table], params: EncoderParams,
                      path: str | Path) -> int:
    """Write final-layer representations as JSONL rows of
    ``{table_id, element_kind, index, vector}`` for external visualization."""
    written = 0
    with open(path, "w", encoding="utf-8") as fh:
        for table in tables:
            state = encode(table, params)
            hg = state.hg
            for v in range(hg.node_count):
                fh.write(json.dumps({"table_id": table.id, "element_kind": "cell",
                                     "index": v, "vector": state.X[v].tolist()}) + "\n")
                written += 1
            for j in range(hg.m):
                fh.write(json.dumps({"table_id": table.id, "element_kind": "col",
                                     "index": j, "vector": state.S[j].tolist()}) + "\n")
                written += 1
            for i in range(hg.n):
                fh.write(json.dumps({"table_id": table.id, "element_kind": "row",
                                     "index": i, "vector": state.S[hg.m + i].tolist()}) + "\n")
                written += 1
            fh.write(json.dumps({"table_id": table.id, "element_kind": "tab",
                                 "index": 0, "vector": state.S[hg.table_edge].tolist()}) + "\n")
            written += 1
    return written
