"""Executable verification of the encoder's structural claims.

Four studies: matched-representation distances under row/column
permutations, a probe showing non-structure-preserving cell shuffles do
move the representations, a color-refinement isomorphism oracle over the
bipartite star expansion of the hypergraph, and a wall-time scaling profile
of one encoder layer.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .encoder import EncoderParams, GraphState, encode, hypertrans_layer, init_embeddings
from .hypergraph import COL, ROW, TAB, Hypergraph, PermutationAction, apply_permutation, build_hypergraph
from .tables import Table

ELEMENT_KINDS = ("cell", "row", "col", "tab")
ACTION_KINDS = ("rows", "cols", "both")


@dataclass
class DistanceStat:
    total: float = 0.0
    max: float = 0.0
    count: int = 0

    def add(self, value: float) -> None:
        self.total += value
        self.max = max(self.max, value)
        self.count += 1

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0


@dataclass
class DistanceReport:
    """Per (action kind, element kind) distance statistics."""

    stats: dict[tuple[str, str], DistanceStat] = field(default_factory=dict)
    samples: dict[str, list[float]] = field(default_factory=dict)
    skipped: int = 0

    def stat(self, action: str, element: str) -> DistanceStat:
        key = (action, element)
        if key not in self.stats:
            self.stats[key] = DistanceStat()
        return self.stats[key]

    def record(self, action: str, element: str, value: float) -> None:
        self.stat(action, element).add(value)

    def record_sample(self, action: str, value: float) -> None:
        self.samples.setdefault(action, []).append(value)

    def max_over(self, action: str | None = None) -> float:
        values = [s.max for (a, _), s in self.stats.items() if action is None or a == action]
        return max(values) if values else 0.0

    def merge(self, other: "DistanceReport") -> None:
        for (a, e), s in other.stats.items():
            mine = self.stat(a, e)
            mine.total += s.total
            mine.max = max(mine.max, s.max)
            mine.count += s.count
        for a, vals in other.samples.items():
            self.samples.setdefault(a, []).extend(vals)
        self.skipped += other.skipped

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["action", "element", "mean", "max", "count"])
        for (a, e), s in sorted(self.stats.items()):
            writer.writerow([a, e, repr(s.mean), repr(s.max), s.count])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "stats": [{"action": a, "element": e, "mean": s.mean, "max": s.max,
                       "count": s.count} for (a, e), s in sorted(self.stats.items())],
            "skipped": self.skipped,
        }


def _matched_distances(state: GraphState, state_p: GraphState, action: PermutationAction,
                       report: DistanceReport, action_kind: str) -> None:
    hg = state.hg
    n, m = hg.n, hg.m
    node_map = action.node_map(n, m)
    for v in range(hg.node_count):
        report.record(action_kind, "cell", float(np.linalg.norm(state.X[v] - state_p.X[node_map[v]])))
    for j in range(m):
        report.record(action_kind, "col",
                      float(np.linalg.norm(state.S[j] - state_p.S[action.sigma_col[j]])))
    for i in range(n):
        report.record(action_kind, "row",
                      float(np.linalg.norm(state.S[m + i] - state_p.S[m + action.sigma_row[i]])))
    report.record(action_kind, "tab",
                  float(np.linalg.norm(state.S[hg.table_edge] - state_p.S[hg.table_edge])))


def permutation_distance(table: Table, params: EncoderParams, n_perms: int,
                         rng: np.random.Generator) -> DistanceReport:
    """Distances between matched element representations of a table and its
    permuted copies; rows-only, columns-only, and joint actions are sampled
    and reported separately."""
    if n_perms < 1:
        raise ValueError("n_perms must be >= 1")
    report = DistanceReport()
    state = encode(table, params)
    for kind in ACTION_KINDS:
        for _ in range(n_perms):
            action = PermutationAction.random(
                table.n, table.m, rng,
                permute_rows=kind in ("rows", "both"),
                permute_cols=kind in ("cols", "both"))
            permuted = apply_permutation(table, action)
            state_p = encode(permuted, params)
            _matched_distances(state, state_p, action, report, kind)
    return report


def permutation_distance_study(tables: Sequence[Table], params: EncoderParams,
                               n_perms: int, rng: np.random.Generator) -> DistanceReport:
    report = DistanceReport()
    for table in tables:
        report.merge(permutation_distance(table, params, n_perms, rng))
    return report


def _pick_swap(table: Table, rng: np.random.Generator, within_row: bool,
               attempts: int = 64) -> tuple[tuple[int, int], tuple[int, int]] | None:
    """Two positions with different content, across distinct rows and
    columns (or within one row when asked)."""
    n, m = table.n, table.m
    for _ in range(attempts):
        i1, j1 = int(rng.integers(0, n)), int(rng.integers(0, m))
        if within_row:
            i2 = i1
            j2 = int(rng.integers(0, m))
        else:
            i2, j2 = int(rng.integers(0, n)), int(rng.integers(0, m))
            if i1 == i2 or j1 == j2:
                continue
        if (i1, j1) == (i2, j2):
            continue
        if table.rows[i1][j1] != table.rows[i2][j2]:
            return (i1, j1), (i2, j2)
    return None


def swap_cells(table: Table, a: tuple[int, int], b: tuple[int, int]) -> Table:
    rows = [list(r) for r in table.rows]
    rows[a[0]][a[1]], rows[b[0]][b[1]] = rows[b[0]][b[1]], rows[a[0]][a[1]]
    return Table(id=table.id, caption=table.caption, headers=table.headers,
                 rows=tuple(tuple(r) for r in rows))


def excessive_invariance_probe(table: Table, params: EncoderParams, n_shuffles: int,
                               rng: np.random.Generator,
                               within_row: bool = False) -> DistanceReport:
    """Relative shift of the whole-table representation under cell swaps
    that are not expressible as row/column permutations.

    Tables without two distinct swappable cells are skipped with a notice in
    ``report.skipped``.
    """
    report = DistanceReport()
    action_kind = "swap_within_row" if within_row else "swap_cross"
    state = encode(table, params)
    base = state.S[state.hg.table_edge]
    base_norm = max(float(np.linalg.norm(base)), 1e-12)
    found_any = False
    for _ in range(n_shuffles):
        pick = _pick_swap(table, rng, within_row)
        if pick is None:
            continue
        found_any = True
        shuffled = swap_cells(table, *pick)
        state_s = encode(shuffled, params)
        rel = float(np.linalg.norm(state_s.S[state_s.hg.table_edge] - base)) / base_norm
        report.record(action_kind, "tab", rel)
        report.record_sample(action_kind, rel)
    if not found_any:
        report.skipped += 1
    return report


# ---------------------------------------------------------------------------
# Star-expansion color refinement
# ---------------------------------------------------------------------------

class WLVerdict(Enum):
    INDISTINGUISHABLE = "isomorphic-indistinguishable"
    DISTINGUISHABLE = "distinguishable"


@dataclass
class WLColoring:
    """Stable vertex colors of one star-expansion graph."""

    colors: list[int]
    rounds: int
    histogram: dict[int, int]


def _star_graph(hg: Hypergraph) -> tuple[list[list[int]], list[tuple]]:
    """Bipartite adjacency (cell vertices then hyperedge vertices) plus
    initial color keys: (vertex kind, degree, content tokens)."""
    nv, ne = hg.node_count, hg.edge_count
    adj: list[list[int]] = [[] for _ in range(nv + ne)]
    for e in range(ne):
        for v in hg.edge_members[e]:
            adj[v].append(nv + e)
            adj[nv + e].append(v)
    kind_code = {COL: 1, ROW: 2, TAB: 3}
    keys: list[tuple] = []
    for v in range(nv):
        i, j = hg.node_cell(v)
        keys.append((0, len(adj[v]), tuple(hg.table.rows[i][j])))
    for e in range(ne):
        keys.append((kind_code[hg.edge_kind(e)], len(adj[nv + e]), hg.edge_tokens(e)))
    return adj, keys


def refine_colors(graphs: Sequence[Hypergraph], max_rounds: int | None = None) -> list[WLColoring]:
    """Joint color refinement over the star expansions of several
    hypergraphs, so color ids are comparable across them.

    Each round recolors every vertex by (its color, sorted multiset of
    neighbor colors); refinement never merges classes and stops once the
    global class count is stable.
    """
    adjs, all_keys = [], []
    offsets = [0]
    for hg in graphs:
        adj, keys = _star_graph(hg)
        adjs.append(adj)
        all_keys.extend(keys)
        offsets.append(offsets[-1] + len(adj))
    total = offsets[-1]
    palette = {key: idx for idx, key in enumerate(sorted(set(all_keys)))}
    colors = [palette[k] for k in all_keys]
    limit = max_rounds if max_rounds is not None else total
    n_classes = len(palette)
    rounds = 0
    for _ in range(limit):
        signatures = []
        for gi, adj in enumerate(adjs):
            base = offsets[gi]
            for v in range(len(adj)):
                neigh = sorted(colors[base + u] for u in adj[v])
                signatures.append((colors[base + v], tuple(neigh)))
        palette = {sig: idx for idx, sig in enumerate(sorted(set(signatures)))}
        new_colors = [palette[sig] for sig in signatures]
        rounds += 1
        if len(palette) == n_classes:
            colors = new_colors
            break
        n_classes = len(palette)
        colors = new_colors
    out = []
    for gi in range(len(graphs)):
        segment = colors[offsets[gi]:offsets[gi + 1]]
        hist: dict[int, int] = {}
        for c in segment:
            hist[c] = hist.get(c, 0) + 1
        out.append(WLColoring(colors=segment, rounds=rounds, histogram=hist))
    return out


def wl_isomorphic(hg_a: Hypergraph, hg_b: Hypergraph,
                  max_rounds: int | None = None) -> WLVerdict:
    """Color-refinement verdict: indistinguishable iff the stable color
    histograms coincide."""
    ca, cb = refine_colors([hg_a, hg_b], max_rounds)
    return WLVerdict.INDISTINGUISHABLE if ca.histogram == cb.histogram \
        else WLVerdict.DISTINGUISHABLE


def encodings_equal(state_a: GraphState, state_b: GraphState, tol: float) -> bool:
    """Whether two encodings carry the same multiset of element
    representations per element kind (order-free comparison by sorted
    rows)."""
    if state_a.X.shape != state_b.X.shape or state_a.S.shape != state_b.S.shape:
        return False
    ha, hb = state_a.hg, state_b.hg
    groups = [
        (state_a.X, state_b.X),
        (state_a.S[:ha.m], state_b.S[:hb.m]),
        (state_a.S[ha.m:ha.m + ha.n], state_b.S[hb.m:hb.m + hb.n]),
        (state_a.S[ha.table_edge:ha.table_edge + 1], state_b.S[hb.table_edge:hb.table_edge + 1]),
    ]
    for a, b in groups:
        a_sorted = a[np.lexsort(a.T[::-1])]
        b_sorted = b[np.lexsort(b.T[::-1])]
        if not np.allclose(a_sorted, b_sorted, rtol=0.0, atol=tol):
            return False
    return True


# ---------------------------------------------------------------------------
# Scaling profile
# ---------------------------------------------------------------------------

@dataclass
class ProfileRow:
    n: int
    m: int
    nm: int
    median_seconds: float


def profile_scaling(params: EncoderParams | None, sizes: Sequence[tuple[int, int]],
                    reps: int = 5, warmup: int = 2, seed: int = 0,
                    config=None) -> list[ProfileRow]:
    """Median wall time of one encoder layer per table size.

    Sizes must ascend in n*m; timings use a single random table per size
    with one shared parameter set (created on the fly when ``params`` is
    None). BLAS thread counts are pinned to one when threadpoolctl is
    available so medians track arithmetic, not pool scheduling.
    """
    if sorted(sizes, key=lambda s: s[0] * s[1]) != list(sizes):
        raise ValueError("sizes must be sorted ascending by n*m")
    from .numerics import ParamStore
    from .seeding import TAG_SYNTH, rng_from
    from .synthdata import typed_table
    from .tables import TruncationLimits, build_vocab, parse_table
    from .encoder import ModelConfig

    max_n = max(n for n, _ in sizes)
    max_m = max(m for _, m in sizes)
    limits = TruncationLimits(max_rows=max(max_n, 30), max_cols=max(max_m, 20))
    records = []
    for n, m in sizes:
        rng = rng_from(TAG_SYNTH, seed, n, m)
        records.append(typed_table(f"prof_{n}x{m}", rng, n_rows=n, n_cols=m)[0])
    vocab = build_vocab(records, 8192)
    if params is None:
        cfg = config if config is not None else ModelConfig()
        store = ParamStore(np.float64)
        params = EncoderParams.create(store, len(vocab), cfg, rng_from(TAG_SYNTH, seed))
    elif len(vocab) > params.vocab_size:
        raise ValueError("profile vocabulary exceeds the embedding table")

    rows: list[ProfileRow] = []
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        import contextlib
        threadpool_limits = lambda limits: contextlib.nullcontext()
    with threadpool_limits(limits=1):
        for (n, m), rec in zip(sizes, records):
            table = parse_table(rec, vocab, limits)
            hg = build_hypergraph(table)
            state = init_embeddings(hg, params, rng_from(TAG_SYNTH, seed, n, m, 1))
            for _ in range(warmup):
                hypertrans_layer(state, hg, params, layer=0)
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                hypertrans_layer(state, hg, params, layer=0)
                times.append(time.perf_counter() - t0)
            rows.append(ProfileRow(n=n, m=m, nm=n * m,
                                   median_seconds=float(np.median(times))))
    return rows


def doubling_ratios(rows: Sequence[ProfileRow]) -> list[float]:
    """Time ratios between consecutive sizes that double n*m."""
    ratios = []
    for prev, cur in zip(rows, rows[1:]):
        if cur.nm == 2 * prev.nm:
            ratios.append(cur.median_seconds / prev.median_seconds)
    return ratios


def profile_to_csv(rows: Sequence[ProfileRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["n", "m", "nm", "median_seconds"])
    for r in rows:
        writer.writerow([r.n, r.m, r.nm, repr(r.median_seconds)])
    return buf.getvalue()


def profile_to_json(rows: Sequence[ProfileRow]) -> dict:
    return {"rows": [{"n": r.n, "m": r.m, "nm": r.nm,
                      "median_seconds": r.median_seconds} for r in rows],
            "doubling_ratios": doubling_ratios(rows)}
