"""Hard-negative mining against a built mention index.

For each training pair the query is searched against the index; the
highest-scoring wrong-entity mentions become negatives. A global cap
limits how often any entity appears as a negative (cap_ratio times its
training-mention count) so frequent entities cannot flood the pool.
Queries are processed in sorted id order, which makes cap consumption,
and therefore the mined file, deterministic.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections import Counter
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .encoder import EncoderParams, encode_records
from .errors import CorpusError
from .exact_index import MentionIndex, search_exact_rows, top_n_indices
from .io_utils import atomic_open
from .records import MentionPair, MentionRecord, records_by_id
from .train import FeatureCache, PairExample

logger = logging.getLogger(__name__)

DEFAULT_NEGATIVES_PER_QUERY = 10
DEFAULT_CAP_RATIO = 10


@dataclasses.dataclass(frozen=True)
class MinedExample:
    query_id: str
    positive_id: str
    negative_ids: Tuple[str, ...]


@dataclasses.dataclass
class MiningStats:
    n_queries: int = 0
    n_empty: int = 0
    cap_skips: int = 0
    total_negatives: int = 0
    resampled_positives: int = 0

    def mean_negatives(self) -> float:
        return self.total_negatives / self.n_queries if self.n_queries else 0.0


def _select_negatives(index: MentionIndex, rows: np.ndarray,
                      query_entity: str, want: int,
                      caps: Dict[str, int], used: Counter,
                      stats: MiningStats) -> List[int]:
    chosen: List[int] = []
    pending: Counter = Counter()
    for row in rows:
        entity = index.entity_ids[row]
        if entity == query_entity:
            continue
        if used[entity] + pending[entity] >= caps.get(entity, 0):
            stats.cap_skips += 1
            continue
        pending[entity] += 1
        chosen.append(int(row))
        if len(chosen) == want:
            break
    return chosen


def _resample_positive(index: MentionIndex, query_vec: np.ndarray,
                       query_id: str, entity_rows: np.ndarray) -> str:
    """Highest-scoring same-entity indexed mention, excluding the query itself."""
    scores = index.vectors[entity_rows] @ query_vec
    order = entity_rows[top_n_indices(scores, entity_rows.shape[0],
                                      tiebreak=entity_rows)]
    for row in order:
        if index.mention_ids[row] != query_id:
            return index.mention_ids[row]
    return ""


def mine_hard_negatives(
    params: EncoderParams,
    index: MentionIndex,
    pairs: Sequence[MentionPair],
    records: Sequence[MentionRecord],
    *,
    negatives_per_query: int = DEFAULT_NEGATIVES_PER_QUERY,
    cap_ratio: int = DEFAULT_CAP_RATIO,
    resample_positives: bool = True,
    max_context: int = 64,
) -> Tuple[List[MinedExample], MiningStats]:
    """Mine negatives (and optionally resampled positives) for each pair.

    Returns examples in sorted query-id order. Queries that find no
    eligible negative (everything same-entity or capped) are kept with an
    empty list and tallied in the stats.
    """
    if negatives_per_query < 1:
        raise ValueError("negatives_per_query must be >= 1")
    if cap_ratio < 1:
        raise ValueError("cap_ratio must be >= 1")
    by_id = records_by_id(records)
    ordered = sorted(pairs, key=lambda p: p.query_id)
    missing = [p.query_id for p in ordered if p.query_id not in by_id]
    if missing:
        raise CorpusError(f"pairs reference unknown mentions: {missing[:5]}")

    queries = encode_records(params, [by_id[p.query_id] for p in ordered],
                             max_context=max_context)
    caps = {e: cap_ratio * c for e, c in index.entity_positive_counts.items()}
    used: Counter = Counter()
    entity_rows = index.rows_by_entity()
    stats = MiningStats()
    out: List[MinedExample] = []
    n = len(index)

    for i, pair in enumerate(ordered):
        entity = by_id[pair.query_id].entity_id
        fetch = min(n, max(4 * negatives_per_query, 16))
        while True:
            rows, _ = search_exact_rows(index, queries[i], fetch)
            chosen = _select_negatives(index, rows, entity,
                                       negatives_per_query, caps, used, stats)
            if len(chosen) == negatives_per_query or fetch >= n:
                break
            fetch = min(n, fetch * 2)
        for row in chosen:
            used[index.entity_ids[row]] += 1

        positive_id = pair.positive_id
        if resample_positives and entity in entity_rows:
            replacement = _resample_positive(index, queries[i], pair.query_id,
                                             entity_rows[entity])
            if replacement and replacement != positive_id:
                stats.resampled_positives += 1
            if replacement:
                positive_id = replacement

        stats.n_queries += 1
        stats.total_negatives += len(chosen)
        if not chosen:
            stats.n_empty += 1
        out.append(MinedExample(
            query_id=pair.query_id,
            positive_id=positive_id,
            negative_ids=tuple(index.mention_ids[r] for r in chosen)))

    logger.info(
        "mined %d queries: %.2f negatives/query, %d empty, %d cap skips, "
        "%d positives resampled", stats.n_queries, stats.mean_negatives(),
        stats.n_empty, stats.cap_skips, stats.resampled_positives)
    return out, stats


def to_train_examples(mined: Sequence[MinedExample],
                      records: Sequence[MentionRecord],
                      vocab_size: int,
                      max_context: int = 64) -> List[PairExample]:
    """Resolve mined ids back to featurized examples for the training loop."""
    cache = FeatureCache(records, vocab_size, max_context)
    return [PairExample(
        query=cache.get(ex.query_id),
        positive=cache.get(ex.positive_id),
        hard_negatives=tuple(cache.get(m) for m in ex.negative_ids))
        for ex in mined]


def write_mined(path: str, mined: Sequence[MinedExample]) -> None:
    with atomic_open(path, "w") as fh:
        for ex in mined:
            fh.write(json.dumps({
                "query_id": ex.query_id,
                "positive_id": ex.positive_id,
                "negatives": list(ex.negative_ids),
            }, sort_keys=True) + "\n")


def read_mined(path: str) -> List[MinedExample]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(MinedExample(
                    query_id=obj["query_id"],
                    positive_id=obj["positive_id"],
                    negative_ids=tuple(obj["negatives"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad mined example: {exc}")
    return out
