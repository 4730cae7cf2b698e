"""Synthetic table generators for desk-scale corpora and task datasets.

Every generator is a pure function of its seed. Cell values come from small
typed pools so the frequency vocabulary stays compact and every token is
seen during both pretraining and fine-tuning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeding import TAG_SYNTH, rng_from
from .tables import RawRecord

NAMES = ["alice", "bruno", "carla", "dmitri", "elena", "farid", "greta", "hiro",
         "ines", "jonas", "kiara", "liam", "mona", "nadia", "oscar", "priya",
         "quinn", "rosa", "sven", "tara", "umar", "vera", "wendy", "xenia"]
CITIES = ["paris", "london", "tokyo", "delhi", "cairo", "lima", "oslo", "quito",
          "seoul", "accra", "boston", "dublin", "geneva", "havana", "izmir",
          "jakarta", "kyoto", "lagos", "madrid", "nairobi"]
COLORS = ["red", "green", "blue", "amber", "violet", "teal", "coral", "olive",
          "indigo", "maroon", "ochre", "silver"]
ANIMALS = ["otter", "lynx", "heron", "ibex", "sable", "tapir", "urial", "vole",
           "wren", "yak", "zebu", "stoat"]
GENERIC_HEADERS = ["field", "value", "item", "entry", "data", "info", "attr", "record"]
GENERIC_CAPTION = ["records", "samples", "listing", "export", "snapshot", "digest"]

COLUMN_TYPES = ["integer", "date", "name", "city"]

RELATIONS = ["has_age", "lives_in", "born_on", "favorite_color"]
_RELATION_VALUE = {"has_age": "integer", "lives_in": "city",
                   "born_on": "date", "favorite_color": "color"}

# Table classes for type detection and similarity tasks: a caption word
# pool plus a fixed column-type signature per class.
TABLE_CLASSES = ["weather", "roster", "logistics", "census", "payroll"]
_CLASS_SPEC = {
    "weather": (["weather", "forecast", "climate", "humidity", "storm"],
                [("station", "city"), ("reading", "integer"), ("observed", "date")]),
    "roster": (["roster", "squad", "players", "league", "fixtures"],
               [("player", "name"), ("jersey", "integer"), ("hometown", "city")]),
    "logistics": (["freight", "shipment", "cargo", "manifest", "routes"],
                  [("origin", "city"), ("dispatched", "date"), ("crates", "integer")]),
    "census": (["census", "population", "residents", "district", "survey"],
               [("district", "city"), ("households", "integer"), ("persons", "integer")]),
    "payroll": (["payroll", "salary", "wages", "accounts", "ledger"],
                [("employee", "name"), ("amount", "integer"), ("paid", "date")]),
}


def sample_value(kind: str, rng: np.random.Generator) -> str:
    if kind == "integer":
        return str(int(rng.integers(0, 100)))
    if kind == "date":
        y = 2015 + int(rng.integers(0, 10))
        mo = 1 + int(rng.integers(0, 12))
        d = 1 + int(rng.integers(0, 28))
        return f"{y:04d}-{mo:02d}-{d:02d}"
    if kind == "name":
        return str(rng.choice(NAMES))
    if kind == "city":
        return str(rng.choice(CITIES))
    if kind == "color":
        return str(rng.choice(COLORS))
    if kind == "animal":
        return str(rng.choice(ANIMALS))
    raise ValueError(f"unknown value kind {kind!r}")


def _generic_table(table_id: str, col_kinds: list[str], n_rows: int,
                   rng: np.random.Generator) -> RawRecord:
    headers = [str(rng.choice(GENERIC_HEADERS)) for _ in col_kinds]
    caption = " ".join(str(rng.choice(GENERIC_CAPTION)) for _ in range(2))
    rows = [[sample_value(k, rng) for k in col_kinds] for _ in range(n_rows)]
    return RawRecord(id=table_id, caption=caption, headers=headers, rows=rows)


def typed_table(table_id: str, rng: np.random.Generator,
                n_rows: int | None = None, n_cols: int | None = None) -> tuple[RawRecord, list[int]]:
    """Generic table whose columns each follow one value type; returns the
    record and the per-column type indices."""
    m = n_cols if n_cols is not None else 3 + int(rng.integers(0, 3))
    n = n_rows if n_rows is not None else 4 + int(rng.integers(0, 5))
    kind_idx = [int(rng.integers(0, len(COLUMN_TYPES))) for _ in range(m)]
    rec = _generic_table(table_id, [COLUMN_TYPES[k] for k in kind_idx], n, rng)
    return rec, kind_idx


def class_table(table_id: str, class_idx: int, rng: np.random.Generator,
                n_rows: int | None = None) -> RawRecord:
    """Table drawn from one of the fixed table classes."""
    name = TABLE_CLASSES[class_idx]
    caption_pool, signature = _CLASS_SPEC[name]
    n = n_rows if n_rows is not None else 4 + int(rng.integers(0, 5))
    caption = " ".join(str(rng.choice(caption_pool)) for _ in range(3))
    headers = [h for h, _ in signature]
    rows = [[sample_value(kind, rng) for _, kind in signature] for _ in range(n)]
    return RawRecord(id=table_id, caption=caption, headers=headers, rows=rows)


def relation_table(table_id: str, rng: np.random.Generator,
                   n_attrs: int | None = None) -> tuple[RawRecord, list[tuple[int, int]], list[int]]:
    """Key column of entity names plus attribute columns with planted
    relations; returns (record, column pairs, per-pair relation indices)."""
    n_attrs = n_attrs if n_attrs is not None else 2 + int(rng.integers(0, 2))
    n = 4 + int(rng.integers(0, 4))
    rel_idx = [int(rng.integers(0, len(RELATIONS))) for _ in range(n_attrs)]
    headers = ["entity"] + [str(rng.choice(GENERIC_HEADERS)) for _ in range(n_attrs)]
    rows = []
    for _ in range(n):
        row = [sample_value("name", rng)]
        row += [sample_value(_RELATION_VALUE[RELATIONS[r]], rng) for r in rel_idx]
        rows.append(row)
    caption = " ".join(str(rng.choice(GENERIC_CAPTION)) for _ in range(2))
    rec = RawRecord(id=table_id, caption=caption, headers=headers, rows=rows)
    pairs = [(0, j + 1) for j in range(n_attrs)]
    return rec, pairs, rel_idx


def synth_corpus(size: int, seed: int) -> list[RawRecord]:
    """Pretraining corpus: a deterministic mixture of class tables, typed
    tables, and relation tables."""
    if size < 1:
        raise ValueError("corpus size must be >= 1")
    rng = rng_from(TAG_SYNTH, seed)
    records = []
    for i in range(size):
        style = i % 3
        if style == 0:
            records.append(class_table(f"syn{i:06d}", int(rng.integers(0, len(TABLE_CLASSES))), rng))
        elif style == 1:
            records.append(typed_table(f"syn{i:06d}", rng)[0])
        else:
            records.append(relation_table(f"syn{i:06d}", rng)[0])
    return records


def synth_task_records(kind: str, size: int, seed: int,
                       task_tag: int) -> tuple[list, list]:
    """Raw records plus label payloads for one task kind.

    Entries are single records except for similarity pairs, which come as
    (record_a, record_b) tuples. Payloads are per-example label structures:
    column type indices, (pairs, relation indices), a class index, or a
    similar/dissimilar flag.
    """
    rng = rng_from(TAG_SYNTH, seed, task_tag)
    records: list = []
    payloads: list = []
    for i in range(size):
        tid = f"{kind}{i:06d}"
        if kind == "cta":
            rec, kinds = typed_table(tid, rng)
            records.append(rec)
            payloads.append(kinds)
        elif kind == "cpa":
            rec, pairs, rels = relation_table(tid, rng)
            records.append(rec)
            payloads.append((pairs, rels))
        elif kind == "ttd":
            cls_idx = int(rng.integers(0, len(TABLE_CLASSES)))
            records.append(class_table(tid, cls_idx, rng))
            payloads.append(cls_idx)
        elif kind == "tsp":
            cls_a = int(rng.integers(0, len(TABLE_CLASSES)))
            similar = int(rng.integers(0, 2))
            if similar:
                cls_b = cls_a
            else:
                cls_b = int(rng.integers(0, len(TABLE_CLASSES) - 1))
                if cls_b >= cls_a:
                    cls_b += 1
            records.append((class_table(tid + "a", cls_a, rng),
                            class_table(tid + "b", cls_b, rng)))
            payloads.append(similar)
        else:
            raise ValueError(f"unknown task kind {kind!r}")
    return records, payloads
