"""Immutable store of labeled mention embeddings with exact inner-product search."""

from __future__ import annotations

import dataclasses
import struct
from collections import Counter
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .encoder import EncoderParams, encode_records
from .errors import ArtifactFormatError
from .io_utils import atomic_open, read_array, read_str_block, write_array, write_str_block
from .records import ORGANIC, MentionRecord

INDEX_MAGIC = b"MIDX"
INDEX_VERSION = 1


@dataclasses.dataclass(frozen=True)
class MentionIndex:
    """Unit-norm embedding rows plus aligned entity/mention/language labels.

    ``entity_positive_counts`` holds per-entity organic training-mention
    counts (descriptions excluded); mining caps and frequency buckets both
    read from it. Vectors are float32, C-contiguous, and write-protected;
    concurrent searches need no synchronization.
    """

    vectors: np.ndarray
    mention_ids: Tuple[str, ...]
    entity_ids: Tuple[str, ...]
    languages: Tuple[str, ...]
    sources: Tuple[str, ...]
    entity_positive_counts: Dict[str, int]

    def __post_init__(self):
        n = self.vectors.shape[0]
        if not (len(self.mention_ids) == len(self.entity_ids)
                == len(self.languages) == len(self.sources) == n):
            raise ValueError("index label arrays misaligned")
        if n:
            norms = np.linalg.norm(self.vectors, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-5):
                raise ValueError("index rows must be unit-norm within 1e-5")
        self.vectors.setflags(write=False)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def rows_by_entity(self) -> Dict[str, np.ndarray]:
        """Row indices grouped by entity (computed on demand)."""
        groups: Dict[str, List[int]] = {}
        for row, entity in enumerate(self.entity_ids):
            groups.setdefault(entity, []).append(row)
        return {e: np.asarray(rows, dtype=np.int64) for e, rows in groups.items()}


def top_n_indices(scores: np.ndarray, n: int, tiebreak: np.ndarray = None) -> np.ndarray:
    """Exact top-n positions by descending score.

    Ties resolve by ascending ``tiebreak`` (position index by default).
    Exact at the selection boundary: all rows tied with the n-th score are
    sorted before truncation.
    """
    size = scores.shape[0]
    if tiebreak is None:
        tiebreak = np.arange(size)
    n = min(n, size)
    if n == size:
        order = np.lexsort((tiebreak, -scores))
        return order
    kth = np.partition(scores, size - n)[size - n]
    cand = np.flatnonzero(scores >= kth)
    order = cand[np.lexsort((tiebreak[cand], -scores[cand]))]
    return order[:n]


def build_index(
    params: EncoderParams,
    records: Sequence[MentionRecord],
    include_descriptions: bool = True,
    max_context: int = 64,
) -> MentionIndex:
    """Encode records into an index; row order follows input order.

    Description pseudo-mentions are kept only when ``include_descriptions``;
    positive counts always cover the organic records only.
    """
    kept = [r for r in records
            if r.source == ORGANIC or include_descriptions]
    counts = Counter(r.entity_id for r in records if r.source == ORGANIC)
    if kept:
        vectors = encode_records(params, kept, max_context=max_context)
        vectors = vectors.astype(np.float32)
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    else:
        vectors = np.zeros((0, params.d), dtype=np.float32)
    return MentionIndex(
        vectors=np.ascontiguousarray(vectors),
        mention_ids=tuple(r.mention_id for r in kept),
        entity_ids=tuple(r.entity_id for r in kept),
        languages=tuple(r.language for r in kept),
        sources=tuple(r.source for r in kept),
        entity_positive_counts=dict(counts),
    )


def search_exact_rows(index: MentionIndex, query: np.ndarray,
                      top_n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row indices and scores of the exact top-n by inner product."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    if len(index) == 0:
        raise ValueError("empty index")
    scores = index.vectors @ np.asarray(query, dtype=np.float32)
    rows = top_n_indices(scores, top_n)
    return rows, scores[rows]


def search_exact(index: MentionIndex, query: np.ndarray,
                 top_n: int) -> List[Tuple[str, str, float]]:
    """Exact top-n (mention_id, entity_id, score), ties by ascending row."""
    rows, scores = search_exact_rows(index, query, top_n)
    return [(index.mention_ids[r], index.entity_ids[r], float(s))
            for r, s in zip(rows, scores)]


def save_index(path: str, index: MentionIndex) -> None:
    """MIDX file: header, float32 vectors, label blocks, positive counts."""
    with atomic_open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<IQI", INDEX_VERSION, len(index), index.d))
        write_array(fh, index.vectors, "<f4")
        write_str_block(fh, list(index.mention_ids))
        write_str_block(fh, list(index.entity_ids))
        write_str_block(fh, list(index.languages))
        write_str_block(fh, list(index.sources))
        fh.write(struct.pack("<Q", len(index.entity_positive_counts)))
        for entity, count in index.entity_positive_counts.items():
            raw = entity.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", count))


def load_index(path: str) -> MentionIndex:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != INDEX_MAGIC:
            raise ArtifactFormatError(f"{path}: not a mention index file")
        version, n, d = struct.unpack("<IQI", fh.read(16))
        if version != INDEX_VERSION:
            raise ArtifactFormatError(f"{path}: index version {version} unsupported")
        vectors = read_array(fh, (n, d), "<f4")
        mention_ids = read_str_block(fh, n)
        entity_ids = read_str_block(fh, n)
        languages = read_str_block(fh, n)
        sources = read_str_block(fh, n)
        (n_entities,) = struct.unpack("<Q", fh.read(8))
        counts = {}
        for _ in range(n_entities):
            (ln,) = struct.unpack("<I", fh.read(4))
            entity = fh.read(ln).decode("utf-8")
            (count,) = struct.unpack("<Q", fh.read(8))
            counts[entity] = count
    return MentionIndex(
        vectors=np.ascontiguousarray(vectors),
        mention_ids=tuple(mention_ids),
        entity_ids=tuple(entity_ids),
        languages=tuple(languages),
        sources=tuple(sources),
        entity_positive_counts=counts,
    )
