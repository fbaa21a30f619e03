"""Synthetic corpora with controllable surface-form ambiguity.

Entities come in pairs that share a name token, so surface form alone
cannot separate them. Each entity has several usage clusters with
disjoint context vocabularies; descriptions only cover the first
cluster. Queries drawn from later clusters are therefore answerable
from indexed mentions but not from descriptions, which is the behavior
the mention index exists to fix. Optional zero-shot entities get a
description and queries but no training mentions.
"""

from __future__ import annotations

import dataclasses
from typing import Dict, List, Tuple

import numpy as np

from .records import DESCRIPTION, ORGANIC, MentionRecord

LANGUAGES = ("aa", "bb")


@dataclasses.dataclass(frozen=True)
class SyntheticConfig:
    entities: int = 6
    clusters_per_entity: int = 2
    mentions_per_cluster: int = 20
    queries_per_cluster: int = 5
    zero_shot_entities: int = 0
    vocab: int = 400
    noise: float = 0.05
    context_len: int = 16
    description_len: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.entities < 2 or self.entities % 2:
            raise ValueError("entities must be an even number >= 2")
        if self.clusters_per_entity < 1:
            raise ValueError("clusters_per_entity must be >= 1")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise must be in [0, 1)")


@dataclasses.dataclass(frozen=True)
class SyntheticCorpus:
    train_records: Tuple[MentionRecord, ...]
    description_records: Tuple[MentionRecord, ...]
    query_records: Tuple[MentionRecord, ...]
    query_clusters: Tuple[int, ...]
    cluster_vocab: Dict[Tuple[str, int], Tuple[str, ...]]
    zero_shot_ids: Tuple[str, ...]

    def all_records(self) -> List[MentionRecord]:
        return list(self.train_records) + list(self.description_records)


def _make_mention(rng: np.random.Generator, mention_id: str, entity_id: str,
                  language: str, name: str, pool: Tuple[str, ...],
                  noise_pool: Tuple[str, ...], noise: float,
                  length: int) -> MentionRecord:
    tokens = [pool[int(rng.integers(len(pool)))] for _ in range(length)]
    if noise > 0.0:
        for i in range(length):
            if rng.random() < noise:
                tokens[i] = noise_pool[int(rng.integers(len(noise_pool)))]
    pos = int(rng.integers(length + 1))
    tokens.insert(pos, name)
    return MentionRecord(
        mention_id=mention_id,
        entity_id=entity_id,
        language=language,
        title_tokens=("page", name),
        context_tokens=tuple(tokens),
        span_start=pos,
        span_end=pos + 1,
        source=ORGANIC,
    )


def make_synthetic_corpus(config: SyntheticConfig) -> SyntheticCorpus:
    """Deterministic corpus for a config and seed."""
    rng = np.random.default_rng(config.seed)
    n_reg = config.entities
    n_zs = config.zero_shot_entities
    names = [f"name{i}" for i in range(n_reg // 2)]
    names += [f"zname{i}" for i in range(n_zs)]
    n_pools = n_reg * config.clusters_per_entity + n_zs
    width = (config.vocab - len(names)) // n_pools
    if width < 4:
        raise ValueError(
            f"vocab={config.vocab} too small for {n_pools} disjoint clusters")

    entity_ids = [f"E{i}" for i in range(n_reg)]
    zs_ids = [f"Z{i}" for i in range(n_zs)]
    entity_name = {f"E{i}": names[i // 2] for i in range(n_reg)}
    entity_name.update({f"Z{i}": f"zname{i}" for i in range(n_zs)})

    cluster_vocab: Dict[Tuple[str, int], Tuple[str, ...]] = {}
    cursor = 0
    for entity in entity_ids:
        for cluster in range(config.clusters_per_entity):
            cluster_vocab[(entity, cluster)] = tuple(
                f"w{cursor + j}" for j in range(width))
            cursor += width
    for entity in zs_ids:
        cluster_vocab[(entity, 0)] = tuple(
            f"w{cursor + j}" for j in range(width))
        cursor += width
    all_words = tuple(w for pool in cluster_vocab.values() for w in pool)

    counter = 0
    train: List[MentionRecord] = []
    queries: List[MentionRecord] = []
    query_clusters: List[int] = []

    for entity in entity_ids:
        for cluster in range(config.clusters_per_entity):
            pool = cluster_vocab[(entity, cluster)]
            for j in range(config.mentions_per_cluster):
                train.append(_make_mention(
                    rng, f"m-{entity}-c{cluster}-{j}", entity,
                    LANGUAGES[counter % 2], entity_name[entity], pool,
                    all_words, config.noise, config.context_len))
                counter += 1
            for j in range(config.queries_per_cluster):
                queries.append(_make_mention(
                    rng, f"q-{entity}-c{cluster}-{j}", entity,
                    LANGUAGES[counter % 2], entity_name[entity], pool,
                    all_words, config.noise, config.context_len))
                query_clusters.append(cluster)
                counter += 1

    descriptions: List[MentionRecord] = []
    for entity in entity_ids + zs_ids:
        pool = cluster_vocab[(entity, 0)]
        tokens = tuple(pool[int(rng.integers(len(pool)))]
                       for _ in range(config.description_len))
        descriptions.append(MentionRecord(
            mention_id=f"d-{entity}",
            entity_id=entity,
            language=LANGUAGES[0],
            title_tokens=("page", entity_name[entity]),
            context_tokens=tokens,
            span_start=None,
            span_end=None,
            source=DESCRIPTION,
        ))

    for entity in zs_ids:
        pool = cluster_vocab[(entity, 0)]
        for j in range(config.queries_per_cluster):
            queries.append(_make_mention(
                rng, f"q-{entity}-c0-{j}", entity,
                LANGUAGES[counter % 2], entity_name[entity], pool,
                all_words, config.noise, config.context_len))
            query_clusters.append(0)
            counter += 1

    return SyntheticCorpus(
        train_records=tuple(train),
        description_records=tuple(descriptions),
        query_records=tuple(queries),
        query_clusters=tuple(query_clusters),
        cluster_vocab=cluster_vocab,
        zero_shot_ids=tuple(zs_ids),
    )


def random_unit_vectors(n: int, d: int, seed: int = 0) -> np.ndarray:
    """Unit-norm float32 rows; handy for search benchmarks."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d)).astype(np.float32)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x
