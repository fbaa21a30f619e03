"""Mention records and their JSONL/TSV serialization.

One JSONL object per line:

    {"mention_id": str?, "entity_id": str, "language": str, "title": str,
     "context": [str], "span": [int, int]?, "source": "organic"|"description"}

``span`` is a half-open token range into ``context`` and is required for
organic records, forbidden for description pseudo-mentions. Pair files are
TSV with two columns: query mention_id, positive mention_id.
"""

from __future__ import annotations

import dataclasses
import json
import os
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import CorpusError
from .io_utils import atomic_open

ORGANIC = "organic"
DESCRIPTION = "description"


@dataclasses.dataclass(frozen=True)
class MentionRecord:
    """One entity-labeled mention-in-context or description pseudo-mention."""

    mention_id: str
    entity_id: str
    language: str
    title_tokens: Tuple[str, ...]
    context_tokens: Tuple[str, ...]
    span_start: Optional[int] = None
    span_end: Optional[int] = None
    source: str = ORGANIC

    def __post_init__(self):
        if not self.entity_id:
            raise CorpusError(f"record {self.mention_id!r}: empty entity_id")
        if self.source not in (ORGANIC, DESCRIPTION):
            raise CorpusError(
                f"record {self.mention_id!r}: unknown source {self.source!r}")
        if self.source == ORGANIC:
            if self.span_start is None or self.span_end is None:
                raise CorpusError(
                    f"record {self.mention_id!r}: organic record without span")
            if not (0 <= self.span_start < self.span_end <= len(self.context_tokens)):
                raise CorpusError(
                    f"record {self.mention_id!r}: span "
                    f"[{self.span_start}, {self.span_end}) out of bounds for "
                    f"context of length {len(self.context_tokens)}")
        elif self.span_start is not None or self.span_end is not None:
            raise CorpusError(
                f"record {self.mention_id!r}: description record carries a span")

    @property
    def page_key(self) -> Tuple[str, ...]:
        """Documents are keyed by their title token sequence."""
        return self.title_tokens

    @property
    def span_tokens(self) -> Tuple[str, ...]:
        if self.source != ORGANIC:
            return ()
        return self.context_tokens[self.span_start:self.span_end]

    @staticmethod
    def from_json(obj: dict, mention_id: Optional[str] = None) -> "MentionRecord":
        source = obj.get("source", ORGANIC)
        span = obj.get("span")
        return MentionRecord(
            mention_id=str(obj["mention_id"]) if "mention_id" in obj else mention_id,
            entity_id=obj["entity_id"],
            language=obj.get("language", ""),
            title_tokens=tuple(obj.get("title", "").split()),
            context_tokens=tuple(obj["context"]),
            span_start=span[0] if span else None,
            span_end=span[1] if span else None,
            source=source,
        )

    def to_json(self) -> dict:
        obj = {
            "mention_id": self.mention_id,
            "entity_id": self.entity_id,
            "language": self.language,
            "title": " ".join(self.title_tokens),
            "context": list(self.context_tokens),
            "source": self.source,
        }
        if self.source == ORGANIC:
            obj["span"] = [self.span_start, self.span_end]
        return obj


@dataclasses.dataclass(frozen=True)
class MentionPair:
    """A training pair: two mentions of the same entity."""

    query_id: str
    positive_id: str

    def __post_init__(self):
        if self.query_id == self.positive_id:
            raise CorpusError(f"pair ({self.query_id!r}) pairs a mention with itself")


def ingest_corpus(path: str, format: str = "jsonl") -> List[MentionRecord]:
    """Parse a mention corpus file, assigning sequential ids where absent.

    Raises CorpusError naming the offending line on malformed JSON or
    invariant violations.
    """
    if format != "jsonl":
        raise ValueError(f"unsupported corpus format {format!r}")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno + 1}: malformed JSON: {exc}") from exc
            try:
                records.append(MentionRecord.from_json(obj, mention_id=str(lineno)))
            except (CorpusError, KeyError, TypeError, IndexError) as exc:
                raise CorpusError(f"{path}:{lineno + 1}: {exc}") from exc
    return records


def write_corpus(path: str, records: Iterable[MentionRecord]) -> None:
    with atomic_open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")


def write_pairs(path: str, pairs: Iterable[MentionPair]) -> None:
    with atomic_open(path, "w") as fh:
        for pair in pairs:
            fh.write(f"{pair.query_id}\t{pair.positive_id}\n")


def read_pairs(path: str) -> List[MentionPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise CorpusError(f"{path}:{lineno + 1}: expected 2 TSV columns")
            pairs.append(MentionPair(parts[0], parts[1]))
    return pairs


def records_by_id(records: Sequence[MentionRecord]) -> Dict[str, MentionRecord]:
    index: Dict[str, MentionRecord] = {}
    for record in records:
        if record.mention_id in index:
            raise CorpusError(f"duplicate mention_id {record.mention_id!r}")
        index[record.mention_id] = record
    return index
