"""Train/test page splits and same-entity training pair construction."""

from __future__ import annotations

import random
from collections import defaultdict
from typing import Dict, List, Sequence, Tuple

from .records import ORGANIC, MentionPair, MentionRecord

DEFAULT_PAIR_CAP = 100_000


def split_pages(
    records: Sequence[MentionRecord],
    test_page_fraction: float,
    seed: int = 0,
) -> Tuple[List[MentionRecord], List[MentionRecord]]:
    """Split mentions into train/test by page so no page straddles the split.

    The number of test pages is max(1, round(fraction * pages)); with a
    single page and a high fraction this can leave the train side empty.
    """
    if not (0.0 < test_page_fraction < 1.0):
        raise ValueError(
            f"test_page_fraction must be in (0, 1), got {test_page_fraction}")
    keys = []
    seen = set()
    for record in records:
        if record.page_key not in seen:
            seen.add(record.page_key)
            keys.append(record.page_key)
    rng = random.Random(seed)
    rng.shuffle(keys)
    n_test = max(1, round(test_page_fraction * len(keys)))
    test_keys = set(keys[:n_test])
    train = [r for r in records if r.page_key not in test_keys]
    test = [r for r in records if r.page_key in test_keys]
    return train, test


def _group_by_entity(records: Sequence[MentionRecord]) -> Dict[str, List[MentionRecord]]:
    groups: Dict[str, List[MentionRecord]] = defaultdict(list)
    for record in records:
        groups[record.entity_id].append(record)
    return groups


def build_mention_pairs(
    records: Sequence[MentionRecord],
    per_entity_pair_cap: int = DEFAULT_PAIR_CAP,
    seed: int = 0,
) -> List[MentionPair]:
    """All ordered same-entity mention pairs, capped per entity.

    Pairs within an entity are shuffled by an entity-derived seed before the
    cap so the kept subset is unbiased; the merged output gets one global
    deterministic shuffle. Entities with fewer than two mentions contribute
    nothing.
    """
    groups = _group_by_entity([r for r in records if r.source == ORGANIC])
    pairs: List[MentionPair] = []
    for entity_id in sorted(groups):
        mentions = groups[entity_id]
        if len(mentions) < 2:
            continue
        entity_pairs = [
            MentionPair(a.mention_id, b.mention_id)
            for a in mentions for b in mentions if a.mention_id != b.mention_id
        ]
        random.Random(f"{seed}:{entity_id}").shuffle(entity_pairs)
        pairs.extend(entity_pairs[:per_entity_pair_cap])
    random.Random(seed).shuffle(pairs)
    return pairs


def build_description_pairs(
    descriptions: Sequence[MentionRecord],
    records: Sequence[MentionRecord],
    seed: int = 0,
) -> List[MentionPair]:
    """Pair each description pseudo-mention with one random organic mention.

    Descriptions whose entity has no organic mention yield no pair; they can
    still be indexed.
    """
    groups = _group_by_entity([r for r in records if r.source == ORGANIC])
    pairs = []
    for desc in descriptions:
        partners = groups.get(desc.entity_id)
        if not partners:
            continue
        rng = random.Random(f"{seed}:{desc.mention_id}")
        partner = partners[rng.randrange(len(partners))]
        pairs.append(MentionPair(desc.mention_id, partner.mention_id))
    return pairs
