"""Shared fixtures: a small encoder and mention-record factories."""

import numpy as np
import pytest

from mentionlink.encoder import init_params
from mentionlink.exact_index import MentionIndex
from mentionlink.records import DESCRIPTION, ORGANIC, MentionRecord


@pytest.fixture(scope="session")
def tiny_params():
    """A real but small encoder; enough for exactness tests, not quality."""
    return init_params(vocab_size=64, d_emb=8, d_hidden=12, d=8, seed=1)


@pytest.fixture
def make_organic():
    def make(mention_id, entity_id, context, span=(0, 1), title="page",
             language="aa"):
        return MentionRecord(
            mention_id=mention_id,
            entity_id=entity_id,
            language=language,
            title_tokens=tuple(title.split()),
            context_tokens=tuple(context),
            span_start=span[0],
            span_end=span[1],
            source=ORGANIC,
        )
    return make


@pytest.fixture
def make_description():
    def make(mention_id, entity_id, context, title="page", language="aa"):
        return MentionRecord(
            mention_id=mention_id,
            entity_id=entity_id,
            language=language,
            title_tokens=tuple(title.split()),
            context_tokens=tuple(context),
            source=DESCRIPTION,
        )
    return make


def unit_rows(rows):
    """Normalize a list of vectors into float32 unit rows."""
    x = np.asarray(rows, dtype=np.float32)
    return np.ascontiguousarray(x / np.linalg.norm(x, axis=1, keepdims=True))


@pytest.fixture
def make_index():
    """Hand-built index from (entity_id, vector) pairs; ids are m0, m1, ..."""
    def make(entities, vectors, languages=None, counts=None):
        n = len(entities)
        langs = tuple(languages) if languages else ("aa",) * n
        return MentionIndex(
            vectors=unit_rows(vectors),
            mention_ids=tuple(f"m{i}" for i in range(n)),
            entity_ids=tuple(entities),
            languages=langs,
            sources=("organic",) * n,
            entity_positive_counts=dict(
                counts if counts is not None
                else {e: entities.count(e) for e in entities}),
        )
    return make
