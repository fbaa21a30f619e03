"""Synthetic corpus generator invariants."""

import dataclasses

import numpy as np
import pytest

from mentionlink.records import DESCRIPTION, ORGANIC
from mentionlink.synthetic import (
    SyntheticConfig,
    make_synthetic_corpus,
    random_unit_vectors,
)

SMALL = SyntheticConfig(entities=2, clusters_per_entity=2,
                        mentions_per_cluster=10, queries_per_cluster=3,
                        vocab=100, noise=0.0, context_len=8, seed=4)


def test_corpus_sizes():
    corpus = make_synthetic_corpus(SMALL)
    assert len(corpus.train_records) == 2 * 2 * 10
    assert len(corpus.description_records) == 2
    assert len(corpus.query_records) == 2 * 2 * 3
    assert len(corpus.query_clusters) == len(corpus.query_records)
    assert corpus.zero_shot_ids == ()
    assert len(corpus.all_records()) == 42


def test_sources_and_spans():
    corpus = make_synthetic_corpus(SMALL)
    for r in corpus.train_records + corpus.query_records:
        assert r.source == ORGANIC
        assert r.context_tokens[r.span_start:r.span_end] == ("name0",)
    for r in corpus.description_records:
        assert r.source == DESCRIPTION
        assert r.span_start is None


def test_paired_entities_share_a_name():
    cfg = dataclasses.replace(SMALL, entities=4)
    corpus = make_synthetic_corpus(cfg)
    name_of = {}
    for r in corpus.train_records:
        name_of.setdefault(r.entity_id, r.context_tokens[r.span_start])
    assert name_of["E0"] == name_of["E1"] == "name0"
    assert name_of["E2"] == name_of["E3"] == "name1"
    assert name_of["E0"] != name_of["E2"]


def test_cluster_vocabularies_are_disjoint():
    corpus = make_synthetic_corpus(SMALL)
    pools = list(corpus.cluster_vocab.values())
    seen = set()
    for pool in pools:
        assert not (set(pool) & seen)
        seen |= set(pool)


def test_noiseless_contexts_stay_in_their_pool():
    corpus = make_synthetic_corpus(SMALL)
    for r, cluster in zip(corpus.query_records, corpus.query_clusters):
        pool = set(corpus.cluster_vocab[(r.entity_id, cluster)])
        context = set(r.context_tokens) - {r.context_tokens[r.span_start]}
        assert context <= pool


def test_descriptions_use_only_the_first_cluster():
    corpus = make_synthetic_corpus(SMALL)
    for r in corpus.description_records:
        pool = set(corpus.cluster_vocab[(r.entity_id, 0)])
        assert set(r.context_tokens) <= pool


def test_noise_injects_out_of_pool_tokens():
    cfg = dataclasses.replace(SMALL, noise=0.5, mentions_per_cluster=30,
                              vocab=200)
    corpus = make_synthetic_corpus(cfg)
    leaked = 0
    for r in corpus.train_records:
        pool = set()
        for cluster in range(cfg.clusters_per_entity):
            pool |= set(corpus.cluster_vocab[(r.entity_id, cluster)])
        context = set(r.context_tokens) - {r.context_tokens[r.span_start]}
        leaked += bool(context - pool)
    assert leaked > 0


def test_zero_shot_entities_have_no_training_mentions():
    cfg = dataclasses.replace(SMALL, zero_shot_entities=2, vocab=150)
    corpus = make_synthetic_corpus(cfg)
    assert corpus.zero_shot_ids == ("Z0", "Z1")
    trained = {r.entity_id for r in corpus.train_records}
    assert not (set(corpus.zero_shot_ids) & trained)
    described = {r.entity_id for r in corpus.description_records}
    queried = {r.entity_id for r in corpus.query_records}
    assert set(corpus.zero_shot_ids) <= described
    assert set(corpus.zero_shot_ids) <= queried


def test_both_languages_appear():
    corpus = make_synthetic_corpus(SMALL)
    langs = {r.language for r in corpus.train_records}
    assert langs == {"aa", "bb"}


def test_determinism_and_seed_sensitivity():
    a = make_synthetic_corpus(SMALL)
    b = make_synthetic_corpus(SMALL)
    assert a == b
    c = make_synthetic_corpus(dataclasses.replace(SMALL, seed=5))
    assert a != c


def test_config_validation():
    with pytest.raises(ValueError, match="even"):
        SyntheticConfig(entities=3)
    with pytest.raises(ValueError, match="clusters_per_entity"):
        SyntheticConfig(clusters_per_entity=0)
    with pytest.raises(ValueError, match="noise"):
        SyntheticConfig(noise=1.0)
    with pytest.raises(ValueError, match="too small"):
        make_synthetic_corpus(dataclasses.replace(SMALL, vocab=10))


def test_random_unit_vectors():
    x = random_unit_vectors(50, 8, seed=2)
    assert x.shape == (50, 8) and x.dtype == np.float32
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-6)
    assert np.array_equal(x, random_unit_vectors(50, 8, seed=2))
    assert not np.array_equal(x, random_unit_vectors(50, 8, seed=3))
