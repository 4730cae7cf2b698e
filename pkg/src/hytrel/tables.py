"""Table parsing, tokenization, and vocabulary handling.

Corpus format: UTF-8 JSONL, one object per line with fields
``{"id": str, "caption": str, "headers": [str], "rows": [[str]]}``.
Vocabularies persist as JSONL of ``{"token": str, "id": int, "count": int}``.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import CorpusError, MalformedTableError

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_TOKEN_RE = re.compile(r"[0-9a-z_]+|[^\s0-9a-z_]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation boundaries.

    Punctuation characters become single-character tokens, so the split is
    reversible by joining with spaces (up to original whitespace).
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class TruncationLimits:
    """Caps applied while parsing; one token cap is shared by captions,
    headers, and cells."""

    max_rows: int = 30
    max_cols: int = 20
    max_tokens_per_text: int = 64

    def __post_init__(self):
        if self.max_rows < 1 or self.max_cols < 1 or self.max_tokens_per_text < 1:
            raise ValueError("truncation limits must all be >= 1")


class Vocabulary:
    """Frequency vocabulary with dense ids and reserved PAD/UNK slots.

    Immutable after construction; safe to share across parallel workers.
    """

    def __init__(self, tokens: Sequence[str], counts: Sequence[int]):
        if len(tokens) != len(counts):
            raise ValueError("tokens and counts must align")
        self._id_to_token: list[str] = [PAD_TOKEN, UNK_TOKEN, *tokens]
        self._counts: list[int] = [0, 0, *map(int, counts)]
        self._token_to_id: dict[str, int] = {t: i for i, t in enumerate(self._id_to_token)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        return self._id_to_token[token_id]

    def count_of(self, token_id: int) -> int:
        return self._counts[token_id]

    @property
    def counts(self) -> list[int]:
        return list(self._counts)

    def encode(self, text: str, max_tokens: int | None = None) -> tuple[int, ...]:
        toks = tokenize(text)
        if max_tokens is not None:
            toks = toks[:max_tokens]
        return tuple(self._token_to_id.get(t, UNK_ID) for t in toks)

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self._id_to_token[i] for i in ids)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, (tok, cnt) in enumerate(zip(self._id_to_token, self._counts)):
                fh.write(json.dumps({"token": tok, "id": i, "count": cnt}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh):
                if not line.strip():
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"{path}: bad vocabulary line {line_no + 1}: {exc}") from exc
        rows.sort(key=lambda r: r["id"])
        if [r["id"] for r in rows] != list(range(len(rows))):
            raise CorpusError(f"{path}: vocabulary ids are not dense")
        if len(rows) < 2 or rows[0]["token"] != PAD_TOKEN or rows[1]["token"] != UNK_TOKEN:
            raise CorpusError(f"{path}: vocabulary is missing reserved PAD/UNK entries")
        return cls([r["token"] for r in rows[2:]], [r["count"] for r in rows[2:]])


@dataclass(frozen=True)
class Table:
    """In-memory table: caption, headers, and a rectangular cell grid,
    all as token-id tuples."""

    id: str
    caption: tuple[int, ...]
    headers: tuple[tuple[int, ...], ...]
    rows: tuple[tuple[tuple[int, ...], ...], ...]

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise MalformedTableError(f"table {self.id!r}: needs at least one row and one header")
        for r in self.rows:
            if len(r) != self.m:
                raise MalformedTableError(f"table {self.id!r}: ragged row (expected {self.m} cells)")

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def m(self) -> int:
        return len(self.headers)

    def cell(self, i: int, j: int) -> tuple[int, ...]:
        return self.rows[i][j]

    def max_token_id(self) -> int:
        ids = [0]
        ids.extend(self.caption)
        for h in self.headers:
            ids.extend(h)
        for r in self.rows:
            for c in r:
                ids.extend(c)
        return max(ids)


@dataclass
class RawRecord:
    """One corpus record before tokenization."""

    id: str
    caption: str
    headers: list[str]
    rows: list[list[str]]

    @classmethod
    def from_json(cls, obj: dict) -> "RawRecord":
        if "headers" not in obj or "rows" not in obj:
            raise MalformedTableError(f"record {obj.get('id')!r}: missing headers or rows")
        return cls(
            id=str(obj.get("id", "")),
            caption=str(obj.get("caption", "") or ""),
            headers=[str(h) for h in obj["headers"]],
            rows=[[str(c) for c in row] for row in obj["rows"]],
        )

    def to_json(self) -> dict:
        return {"id": self.id, "caption": self.caption, "headers": self.headers, "rows": self.rows}


def truncate_record(record: RawRecord, limits: TruncationLimits) -> RawRecord:
    """Apply row/column truncation to a raw record (token caps happen later)."""
    headers = record.headers[: limits.max_cols]
    m = len(headers)
    rows = [(row + [""] * m)[:m] for row in record.rows[: limits.max_rows]]
    return RawRecord(id=record.id, caption=record.caption, headers=headers, rows=rows)


def parse_table(record: RawRecord, vocab: Vocabulary, limits: TruncationLimits | None = None) -> Table:
    """Tokenize and truncate one record into a Table.

    Ragged rows are padded with empty cells; rows/columns beyond the limits
    are dropped; unknown tokens map to UNK. Deterministic in all inputs.
    """
    limits = limits or TruncationLimits()
    trimmed = truncate_record(record, limits)
    if not trimmed.headers:
        raise MalformedTableError(f"table {record.id!r}: no headers after parsing")
    if not trimmed.rows:
        raise MalformedTableError(f"table {record.id!r}: no rows after parsing")
    cap = limits.max_tokens_per_text
    return Table(
        id=trimmed.id,
        caption=vocab.encode(trimmed.caption, cap),
        headers=tuple(vocab.encode(h, cap) for h in trimmed.headers),
        rows=tuple(tuple(vocab.encode(c, cap) for c in row) for row in trimmed.rows),
    )


def iter_corpus(path: str | Path) -> Iterator[RawRecord]:
    """Stream raw records from a JSONL corpus file."""
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: bad JSON on line {line_no + 1}: {exc}") from exc
            yield RawRecord.from_json(obj)


def write_corpus(records: Iterable[RawRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")
            n += 1
    return n


def record_texts(record: RawRecord) -> Iterator[str]:
    yield record.caption
    yield from record.headers
    for row in record.rows:
        yield from row


def build_vocab(corpus: Iterable[RawRecord], size: int) -> Vocabulary:
    """Vocabulary of the ``size`` most frequent tokens (PAD/UNK included in
    ``size``); ties break lexicographically for determinism."""
    if size < 2:
        raise ValueError("vocabulary size must be >= 2 (PAD and UNK are reserved)")
    counter: Counter[str] = Counter()
    seen = 0
    for rec in corpus:
        seen += 1
        for text in record_texts(rec):
            counter.update(tokenize(text))
    if seen == 0:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[: size - 2]
    return Vocabulary([t for t, _ in ranked], [c for _, c in ranked])
