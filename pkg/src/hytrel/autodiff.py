"""Reverse-mode automatic differentiation over numpy arrays.

Define-by-run: every operation records its parents and a backward closure;
``Tensor.backward()`` walks the graph in reverse topological order. All
reductions in forward and backward passes iterate in ascending index order,
so identical inputs give bitwise identical outputs across runs.

dtype follows the inputs (float32 or float64); constants are cast to match.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data: np.ndarray, parents: tuple["Tensor", ...] = (),
                 backward: Callable[[np.ndarray], None] | None = None,
                 requires_grad: bool = False):
        self.data = data
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar for the common cases; the module-level functions are
    # the full op set.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    out._backward = bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, (a, b))

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = bw
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * a.data.dtype.type(c), (a,))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * a.data.dtype.type(c))

    out._backward = bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data, (a, b))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    out._backward = bw
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T.copy(), (a,))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g.T)

    out._backward = bw
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, a.data.dtype.type(0)), (a,))

    def bw(g):
        if a.requires_grad:
            a.accumulate(np.where(mask, g, a.data.dtype.type(0)))

    out._backward = bw
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), (a,))

    def bw(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g, a.data.shape).copy())

    out._backward = bw
    return out


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean over the rows of a 2-D tensor, keeping shape (1, F)."""
    n = a.data.shape[0]
    out = Tensor(a.data.mean(axis=0, keepdims=True), (a,))

    def bw(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g / n, a.data.shape).copy())

    out._backward = bw
    return out


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx], (a,))

    def bw(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a.accumulate(buf)

    out._backward = bw
    return out


def scatter_rows(base: Tensor, idx: np.ndarray, rows: Tensor) -> Tensor:
    """Copy of ``base`` with ``rows`` written at the given row indices."""
    idx = np.asarray(idx, dtype=np.int64)
    data = base.data.copy()
    data[idx] = rows.data
    out = Tensor(data, (base, rows))

    def bw(g):
        if rows.requires_grad:
            rows.accumulate(g[idx])
        if base.requires_grad:
            gb = g.copy()
            gb[idx] = 0
            base.accumulate(gb)

    out._backward = bw
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=0), tuple(parts))
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.accumulate(g[lo:hi])

    out._backward = bw
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), tuple(parts))
    offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.accumulate(g[:, lo:hi])

    out._backward = bw
    return out


def tile_rows(a: Tensor, count: int) -> Tensor:
    """Repeat a (1, F) row ``count`` times."""
    out = Tensor(np.broadcast_to(a.data, (count, a.data.shape[1])).copy(), (a,))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g.sum(axis=0, keepdims=True))

    out._backward = bw
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.data.shape))

    out._backward = bw
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype)
    keep /= a.data.dtype.type(1.0 - rate)
    out = Tensor(a.data * keep, (a,))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * keep)

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# Segment reductions. ``seg`` must be sorted ascending; segments absent from
# ``seg`` stay zero.
# ---------------------------------------------------------------------------

def _segment_starts(seg: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.r_[True, seg[1:] != seg[:-1]])


def segment_sum_np(x: np.ndarray, seg: np.ndarray, num_segments: int) -> np.ndarray:
    out = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    if seg.size == 0:
        return out
    starts = _segment_starts(seg)
    out[seg[starts]] = np.add.reduceat(x, starts, axis=0)
    return out


def segment_max_np(x: np.ndarray, seg: np.ndarray, num_segments: int, fill: float) -> np.ndarray:
    out = np.full((num_segments,) + x.shape[1:], fill, dtype=x.dtype)
    if seg.size == 0:
        return out
    starts = _segment_starts(seg)
    out[seg[starts]] = np.maximum.reduceat(x, starts, axis=0)
    return out


def segment_sum(a: Tensor, seg: np.ndarray, num_segments: int) -> Tensor:
    seg = np.asarray(seg, dtype=np.int64)
    out = Tensor(segment_sum_np(a.data, seg, num_segments), (a,))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g[seg])

    out._backward = bw
    return out


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with population variance."""
    f = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = centered * inv
    out = Tensor(gain.data * xhat + bias.data, (x, gain, bias))

    def bw(g):
        if gain.requires_grad:
            gain.accumulate((g * xhat).sum(axis=0))
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            # standard layer-norm backward, kept in float for both dtypes
            t1 = dxhat.sum(axis=-1, keepdims=True)
            t2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
            x.accumulate((dxhat - (t1 + xhat * t2) / f) * inv)

    out._backward = bw
    return out


def multihead_set_pool(items: Tensor, omega: Tensor, w_k: Tensor, w_v: Tensor,
                       seg: np.ndarray, num_segments: int, heads: int) -> Tensor:
    """Learned-query attention pooling over sets, all segments at once.

    ``items`` holds the stacked member feature rows of every set, ``seg``
    the (sorted) set index of each row. Per head h with width dh = F/heads:
    key and value projections are the h-th column blocks of ``w_k``/``w_v``;
    attention logits are plain dot products of keys with the h-th block of
    the query vector ``omega`` (no scaling); weights are softmax-normalized
    within each set; the pooled per-head values are concatenated back to
    width F. Output row order is the segment index, so the result does not
    depend on member order beyond float rounding.
    """
    seg = np.asarray(seg, dtype=np.int64)
    n_inc, f = items.data.shape
    dh = f // heads
    keys = items.data @ w_k.data                      # (N, F)
    vals = items.data @ w_v.data                      # (N, F)
    k3 = keys.reshape(n_inc, heads, dh)
    v3 = vals.reshape(n_inc, heads, dh)
    om = omega.data.reshape(heads, dh)
    logits = np.einsum("nhd,hd->nh", k3, om)          # (N, heads)
    mx = segment_max_np(logits, seg, num_segments, fill=0.0)
    shifted = np.exp(logits - mx[seg])
    denom = segment_sum_np(shifted, seg, num_segments)
    attn = shifted / denom[seg]                       # (N, heads)
    pooled3 = segment_sum_np(v3 * attn[:, :, None], seg, num_segments)
    out = Tensor(pooled3.reshape(num_segments, f), (items, omega, w_k, w_v))

    def bw(g):
        g3 = g.reshape(num_segments, heads, dh)
        g_inc = g3[seg]                               # (N, heads, dh)
        d_v3 = g_inc * attn[:, :, None]
        d_attn = (g_inc * v3).sum(axis=2)             # (N, heads)
        s = segment_sum_np(attn * d_attn, seg, num_segments)
        d_logits = attn * (d_attn - s[seg])           # softmax backward per set
        d_k3 = d_logits[:, :, None] * om[None, :, :]
        d_keys = d_k3.reshape(n_inc, f)
        d_vals = d_v3.reshape(n_inc, f)
        if items.requires_grad:
            items.accumulate(d_keys @ w_k.data.T + d_vals @ w_v.data.T)
        if w_k.requires_grad:
            w_k.accumulate(items.data.T @ d_keys)
        if w_v.requires_grad:
            w_v.accumulate(items.data.T @ d_vals)
        if omega.requires_grad:
            omega.accumulate(np.einsum("nhd,nh->hd", k3, d_logits).reshape(f))

    out._backward = bw
    return out


def l2_normalize_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    sq = (a.data * a.data).sum(axis=1, keepdims=True)
    norm = np.sqrt(sq + a.data.dtype.type(eps))
    y = a.data / norm
    out = Tensor(y, (a,))

    def bw(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=1, keepdims=True)
            a.accumulate((g - y * dot) / norm)

    out._backward = bw
    return out


def bce_with_logits_mean(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits, overflow-safe."""
    z = logits.data
    y = np.asarray(labels, dtype=z.dtype)
    if z.shape != y.shape:
        raise ValueError(f"logits shape {z.shape} does not match labels shape {y.shape}")
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(np.asarray(per.mean(), dtype=z.dtype), (logits,))

    def bw(g):
        if logits.requires_grad:
            sig = 1.0 / (1.0 + np.exp(-z))
            logits.accumulate(g * (sig - y) / z.size)

    out._backward = bw
    return out


def cross_entropy_rows(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row softmax cross-entropy for integer class targets, shape (B,)."""
    z = logits.data
    t = np.asarray(targets, dtype=np.int64)
    b = z.shape[0]
    mx = z.max(axis=1, keepdims=True)
    shifted = z - mx
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + mx
    out = Tensor(lse[:, 0] - z[np.arange(b), t], (logits,))

    def bw(g):
        if logits.requires_grad:
            soft = np.exp(z - lse)
            soft[np.arange(b), t] -= 1.0
            logits.accumulate(g[:, None] * soft)

    out._backward = bw
    return out


def cross_entropy_mean(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy for integer class targets."""
    return mean_all(cross_entropy_rows(logits, targets))


def sum_tensors(ts: Sequence[Tensor]) -> Tensor:
    if not ts:
        raise ValueError("cannot sum an empty list of tensors")
    acc = ts[0]
    for t in ts[1:]:
        acc = add(acc, t)
    return acc
