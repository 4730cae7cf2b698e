"""Typed hypergraph built from a table, plus structural edit operations.

Each cell (i, j) becomes node ``i*m + j``. Hyperedges are indexed columns
first (0..m-1), then rows (m..m+n-1), then the whole-table edge (m+n).
Every node starts out incident to exactly its column, its row, and the
table edge; masking removes incidences without touching the index space.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tables import Table

COL = "col"
ROW = "row"
TAB = "tab"


@dataclass(frozen=True)
class PermutationAction:
    """Element of the product group of row and column permutations.

    ``sigma_row[i]`` is the destination index of source row ``i`` (likewise
    for columns).
    """

    sigma_row: tuple[int, ...]
    sigma_col: tuple[int, ...]

    def __post_init__(self):
        for name, sigma in (("sigma_row", self.sigma_row), ("sigma_col", self.sigma_col)):
            if sorted(sigma) != list(range(len(sigma))):
                raise ValueError(f"{name} is not a permutation: {sigma}")

    @classmethod
    def identity(cls, n: int, m: int) -> "PermutationAction":
        return cls(tuple(range(n)), tuple(range(m)))

    @classmethod
    def random(cls, n: int, m: int, rng: np.random.Generator,
               permute_rows: bool = True, permute_cols: bool = True) -> "PermutationAction":
        sr = tuple(int(x) for x in rng.permutation(n)) if permute_rows else tuple(range(n))
        sc = tuple(int(x) for x in rng.permutation(m)) if permute_cols else tuple(range(m))
        return cls(sr, sc)

    def compose(self, other: "PermutationAction") -> "PermutationAction":
        """Action equal to applying ``other`` first, then ``self``."""
        return PermutationAction(
            tuple(self.sigma_row[i] for i in other.sigma_row),
            tuple(self.sigma_col[j] for j in other.sigma_col),
        )

    def node_map(self, n: int, m: int) -> list[int]:
        """Flat node id relocation induced on an n x m grid."""
        return [self.sigma_row[i] * m + self.sigma_col[j] for i in range(n) for j in range(m)]

    def edge_map(self, n: int, m: int) -> list[int]:
        """Hyperedge id relocation (columns, then rows, then table)."""
        out = [self.sigma_col[j] for j in range(m)]
        out += [m + self.sigma_row[i] for i in range(n)]
        out.append(m + n)
        return out


def apply_permutation(table: Table, action: PermutationAction) -> Table:
    """Reorder rows and columns independently; caption and id unchanged."""
    n, m = table.n, table.m
    if len(action.sigma_row) != n or len(action.sigma_col) != m:
        raise ValueError(
            f"action shape ({len(action.sigma_row)}, {len(action.sigma_col)}) "
            f"does not match table shape ({n}, {m})"
        )
    headers = [()] * m
    for j, h in enumerate(table.headers):
        headers[action.sigma_col[j]] = h
    rows: list[list[tuple[int, ...]]] = [[()] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            rows[action.sigma_row[i]][action.sigma_col[j]] = table.rows[i][j]
    return Table(
        id=table.id,
        caption=table.caption,
        headers=tuple(headers),
        rows=tuple(tuple(r) for r in rows),
    )


class Hypergraph:
    """Bidirectional node/hyperedge incidence over a source table.

    Immutable after construction; ``mask_connections`` returns a new value.
    Adjacency lists stay sorted ascending so reductions run in one canonical
    order.
    """

    def __init__(self, table: Table, edge_members: Sequence[Sequence[int]],
                 node_edges: Sequence[Sequence[int]], masked: bool = False):
        self.table = table
        self.n = table.n
        self.m = table.m
        self.node_count = self.n * self.m
        self.edge_count = self.m + self.n + 1
        self.edge_members = tuple(tuple(e) for e in edge_members)
        self.node_edges = tuple(tuple(v) for v in node_edges)
        self.masked = masked
        # Flattened incidence in the two canonical sort orders used by the
        # encoder: grouped by edge for pooling into edges, by node for the
        # reverse direction.
        by_edge = [(e, v) for e in range(self.edge_count) for v in self.edge_members[e]]
        by_node = [(v, e) for v in range(self.node_count) for e in self.node_edges[v]]
        self.inc_edge_seg = np.array([p[0] for p in by_edge], dtype=np.int64)
        self.inc_edge_node = np.array([p[1] for p in by_edge], dtype=np.int64)
        self.inc_node_seg = np.array([p[0] for p in by_node], dtype=np.int64)
        self.inc_node_edge = np.array([p[1] for p in by_node], dtype=np.int64)

    @property
    def incidence_count(self) -> int:
        return int(self.inc_edge_seg.size)

    def edge_kind(self, e: int) -> str:
        if e < self.m:
            return COL
        if e < self.m + self.n:
            return ROW
        return TAB

    def edge_tokens(self, e: int) -> tuple[int, ...]:
        """Name payload: header tokens for columns, caption for the table
        edge, nothing for rows."""
        if e < self.m:
            return self.table.headers[e]
        if e < self.m + self.n:
            return ()
        return self.table.caption

    def node_cell(self, v: int) -> tuple[int, int]:
        return divmod(v, self.m)

    def column_edge(self, j: int) -> int:
        return j

    def row_edge(self, i: int) -> int:
        return self.m + i

    @property
    def table_edge(self) -> int:
        return self.m + self.n


def build_hypergraph(table: Table) -> Hypergraph:
    """Connect every cell node to its column, row, and table hyperedges."""
    n, m = table.n, table.m
    members: list[list[int]] = [[] for _ in range(m + n + 1)]
    node_edges: list[list[int]] = []
    for i in range(n):
        for j in range(m):
            v = i * m + j
            edges = [j, m + i, m + n]
            node_edges.append(edges)
            for e in edges:
                members[e].append(v)
    return Hypergraph(table, members, node_edges)


def incidence_matrix(hg: Hypergraph) -> np.ndarray:
    """Dense 0/1 matrix of shape (node_count, edge_count)."""
    b = np.zeros((hg.node_count, hg.edge_count), dtype=np.int8)
    b[hg.inc_edge_node, hg.inc_edge_seg] = 1
    return b


def _round_half_up(x: float) -> int:
    # round() would bank at .5; half-up keeps masked counts predictable.
    return int(np.floor(x + 0.5))


def mask_connections(hg: Hypergraph, ratio: float, rng: np.random.Generator) -> Hypergraph:
    """Drop a uniform sample of node-hyperedge incidences.

    ``round(ratio * incidences)`` connections are removed without
    replacement; any hyperedge emptied by the drop gets one of its original
    members re-attached (set attention over an empty set is undefined).
    Nodes may end up with no incidences; the encoder leaves those untouched.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must be in [0, 1), got {ratio}")
    total = hg.incidence_count
    k = _round_half_up(ratio * total)
    if k == 0:
        return Hypergraph(hg.table, hg.edge_members, hg.node_edges, masked=hg.masked)
    drop = rng.choice(total, size=k, replace=False)
    keep = np.ones(total, dtype=bool)
    keep[drop] = False
    members: list[list[int]] = [[] for _ in range(hg.edge_count)]
    for idx in range(total):
        if keep[idx]:
            members[int(hg.inc_edge_seg[idx])].append(int(hg.inc_edge_node[idx]))
    for e in range(hg.edge_count):
        if not members[e]:
            members[e] = [int(rng.choice(np.asarray(hg.edge_members[e])))]
    node_edges: list[list[int]] = [[] for _ in range(hg.node_count)]
    for e in range(hg.edge_count):
        for v in members[e]:
            node_edges[v].append(e)
    for v in range(hg.node_count):
        node_edges[v].sort()
    return Hypergraph(hg.table, members, node_edges, masked=True)


def incidence_pairs_csv(hg: Hypergraph) -> str:
    """Debug export: one (node id, hyperedge id) row per incidence."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["node_id", "hyperedge_id"])
    for e, v in zip(hg.inc_edge_seg, hg.inc_edge_node):
        writer.writerow([int(v), int(e)])
    return buf.getvalue()


def incidence_grid_csv(hg: Hypergraph) -> str:
    """Debug export: the dense 0/1 incidence grid."""
    b = incidence_matrix(hg)
    buf = io.StringIO()
    writer = csv.writer(buf)
    for row in b:
        writer.writerow([int(x) for x in row])
    return buf.getvalue()
