"""Entity prediction from nearest labeled mentions.

Two ranking modes over the retrieved neighbor list:

- ``top_per_entity``: entities ordered by their best single mention score.
- ``all_mentions``: the top entity wins a (similarity-weighted) vote over
  the k nearest mentions; remaining entities follow by best mention score.

With k=1 the vote degenerates to the single nearest mention, so both
modes agree on the winner.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .encoder import EncoderParams, encode_records
from .exact_index import MentionIndex, search_exact_rows
from .io_utils import atomic_open
from .quantized import QuantizedIndex, SearchParams, search_ann_rows
from .records import MentionRecord

logger = logging.getLogger(__name__)

TOP_PER_ENTITY = "top_per_entity"
ALL_MENTIONS = "all_mentions"
MODES = (TOP_PER_ENTITY, ALL_MENTIONS)

Target = Union[MentionIndex, QuantizedIndex]


@dataclasses.dataclass(frozen=True)
class RankedEntity:
    entity_id: str
    score: float
    mention_id: str
    language: str


@dataclasses.dataclass(frozen=True)
class EntityPrediction:
    ranked: Tuple[RankedEntity, ...]
    mode: str
    k: int

    def entity_ids(self) -> List[str]:
        return [r.entity_id for r in self.ranked]


def _base_of(target: Target) -> MentionIndex:
    if isinstance(target, QuantizedIndex):
        if target.base is None:
            raise ValueError("quantized index has no base index attached")
        return target.base
    return target


def _retrieve(target: Target, query: np.ndarray, fetch: int,
              search_params: Optional[SearchParams]) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(target, QuantizedIndex):
        params = search_params or SearchParams()
        params = dataclasses.replace(
            params, top_n=fetch, rescore_count=max(params.rescore_count, fetch))
        return search_ann_rows(target, query, params)
    return search_exact_rows(target, query, fetch)


def _rank(base: MentionIndex, rows: np.ndarray, scores: np.ndarray,
          mode: str, k: int, top_n: int,
          weighted: bool) -> Tuple[RankedEntity, ...]:
    # Best mention per entity in retrieval order; retrieval is already
    # sorted by score with ties on ascending row.
    best: Dict[str, RankedEntity] = {}
    order: List[str] = []
    for row, score in zip(rows, scores):
        entity = base.entity_ids[row]
        if entity not in best:
            best[entity] = RankedEntity(entity, float(score),
                                        base.mention_ids[row],
                                        base.languages[row])
            order.append(entity)
    if mode == TOP_PER_ENTITY:
        return tuple(best[e] for e in order[:top_n])

    votes: Dict[str, float] = {}
    for row, score in zip(rows[:k], scores[:k]):
        entity = base.entity_ids[row]
        votes[entity] = votes.get(entity, 0.0) + (float(score) if weighted else 1.0)
    # Winner by vote; ties by best mention score, then ascending entity id.
    winner = min(votes, key=lambda e: (-votes[e], -best[e].score, e))
    ranked = [dataclasses.replace(best[winner], score=votes[winner])]
    ranked += [best[e] for e in order if e != winner]
    return tuple(ranked[:top_n])


def predict(
    params: EncoderParams,
    target: Target,
    record: MentionRecord,
    *,
    mode: str = TOP_PER_ENTITY,
    k: int = 5,
    top_n: int = 100,
    weighted: bool = True,
    search_params: Optional[SearchParams] = None,
    max_context: int = 64,
) -> EntityPrediction:
    """Rank candidate entities for one query mention.

    Retrieval widens geometrically until ``top_n`` distinct entities are
    found or the index is exhausted, so dominant entities cannot crowd
    the requested depth out of the neighbor list.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if k < 1 or top_n < 1:
        raise ValueError("k and top_n must be >= 1")
    query = encode_records(params, [record], max_context=max_context)[0]
    return _predict_encoded(query, target, mode, k, top_n, weighted, search_params)


def _predict_encoded(query: np.ndarray, target: Target, mode: str, k: int,
                     top_n: int, weighted: bool,
                     search_params: Optional[SearchParams]) -> EntityPrediction:
    base = _base_of(target)
    n = len(base)
    fetch = min(n, max(4 * top_n, k, 16))
    while True:
        rows, scores = _retrieve(target, query, fetch, search_params)
        entities = len(set(base.entity_ids[r] for r in rows))
        if entities >= top_n or fetch >= n or rows.size >= n:
            break
        fetch = min(n, fetch * 2)
    ranked = _rank(base, rows, scores, mode, max(k, 1), top_n, weighted)
    return EntityPrediction(ranked=ranked, mode=mode, k=k)


def predict_batch(
    params: EncoderParams,
    target: Target,
    records: Sequence[MentionRecord],
    *,
    mode: str = TOP_PER_ENTITY,
    k: int = 5,
    top_n: int = 100,
    weighted: bool = True,
    search_params: Optional[SearchParams] = None,
    max_context: int = 64,
    threads: int = 1,
) -> Tuple[List[Optional[EntityPrediction]], List[Tuple[int, str]]]:
    """Predict for many queries; per-query failures are collected, not raised.

    Returns (predictions, errors) where predictions[i] is None when query
    i failed and errors holds (index, message) pairs.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    queries = encode_records(params, list(records), max_context=max_context)
    out: List[Optional[EntityPrediction]] = [None] * len(records)
    errors: List[Tuple[int, str]] = []

    def run(i: int) -> None:
        out[i] = _predict_encoded(queries[i], target, mode, k, top_n,
                                  weighted, search_params)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(run, i): i for i in range(len(records))}
            for fut, i in futures.items():
                try:
                    fut.result()
                except Exception as exc:
                    errors.append((i, str(exc)))
    else:
        for i in range(len(records)):
            try:
                run(i)
            except Exception as exc:
                errors.append((i, str(exc)))
    for i, msg in errors:
        logger.warning("query %d failed: %s", i, msg)
    return out, sorted(errors)


def write_predictions(path: str, records: Sequence[MentionRecord],
                      predictions: Sequence[Optional[EntityPrediction]]) -> None:
    """One JSON object per query with its ranked entity list."""
    with atomic_open(path, "w") as fh:
        for record, pred in zip(records, predictions):
            if pred is None:
                continue
            obj = {
                "query_id": record.mention_id,
                "gold_entity": record.entity_id,
                "predictions": [
                    {"entity_id": r.entity_id, "score": r.score,
                     "mention_id": r.mention_id, "language": r.language}
                    for r in pred.ranked
                ],
                "k": pred.k,
                "mode": pred.mode,
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_predictions(path: str) -> List[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
