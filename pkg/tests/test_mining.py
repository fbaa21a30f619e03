"""Hard-negative selection, caps, and positive resampling."""

from collections import Counter

import numpy as np
import pytest

from mentionlink.encoder import encode_records
from mentionlink.errors import CorpusError
from mentionlink.mining import (
    MinedExample,
    mine_hard_negatives,
    read_mined,
    to_train_examples,
    write_mined,
)
from mentionlink.records import MentionPair


def corpus(make_organic, spec):
    """spec: list of (mention_id, entity_id, context tokens)."""
    return [make_organic(mid, ent, ctx, span=(0, 1))
            for mid, ent, ctx in spec]


def brute_force_negatives(params, index, record, want, max_context=8):
    """Top wrong-entity rows by score with ascending-row ties, uncapped."""
    q = encode_records(params, [record], max_context=max_context)[0]
    scores = index.vectors @ q.astype(np.float32)
    order = sorted(range(len(index)), key=lambda r: (-scores[r], r))
    picked = [r for r in order if index.entity_ids[r] != record.entity_id]
    return [index.mention_ids[r] for r in picked[:want]]


@pytest.fixture
def five_mention_setup(tiny_params, make_organic, make_index):
    spec = [
        ("m0", "E1", ["alpha", "x"]),
        ("m1", "E1", ["alpha", "y"]),
        ("m2", "E2", ["beta", "x"]),
        ("m3", "E2", ["beta", "y"]),
        ("m4", "E3", ["gamma", "z"]),
    ]
    records = corpus(make_organic, spec)
    vectors = encode_records(tiny_params, records, max_context=8)
    index = make_index([e for _, e, _ in spec], vectors,
                       counts={"E1": 10, "E2": 10, "E3": 10})
    return records, index


def test_negatives_match_brute_force(tiny_params, five_mention_setup):
    records, index = five_mention_setup
    pairs = [MentionPair("m0", "m1"), MentionPair("m2", "m3")]
    mined, stats = mine_hard_negatives(
        tiny_params, index, pairs, records, negatives_per_query=3,
        cap_ratio=10, resample_positives=False, max_context=8)
    assert [ex.query_id for ex in mined] == ["m0", "m2"]
    for ex, record in zip(mined, [records[0], records[2]]):
        want = brute_force_negatives(tiny_params, index, record, 3)
        assert list(ex.negative_ids) == want
    assert stats.n_queries == 2 and stats.n_empty == 0


def test_same_entity_rows_never_negative(tiny_params, five_mention_setup):
    records, index = five_mention_setup
    pairs = [MentionPair("m0", "m1")]
    mined, _ = mine_hard_negatives(
        tiny_params, index, pairs, records, negatives_per_query=4,
        resample_positives=False, max_context=8)
    # m1 is m0's nearest neighbor by construction; it must be skipped.
    assert "m1" not in mined[0].negative_ids
    assert set(mined[0].negative_ids) <= {"m2", "m3", "m4"}


def test_cap_binds_exactly(tiny_params, make_organic, make_index):
    # Two query entities both prefer E9's single mention; cap_ratio=1 with
    # one positive allows exactly one use of E9 as a negative overall.
    spec = [("m0", "E1", ["alpha", "x"]),
            ("m1", "E1", ["alpha", "y"]),
            ("m2", "E2", ["alpha", "z"]),
            ("m3", "E2", ["alpha", "w"]),
            ("m4", "E9", ["alpha", "q"]),
            ("m5", "E8", ["omega", "r"])]
    records = corpus(make_organic, spec)
    vectors = encode_records(tiny_params, records, max_context=8)
    index = make_index([e for _, e, _ in spec], vectors,
                       counts={"E1": 2, "E2": 2, "E9": 1, "E8": 1})
    pairs = [MentionPair("m0", "m1"), MentionPair("m2", "m3")]
    mined, stats = mine_hard_negatives(
        tiny_params, index, pairs, records, negatives_per_query=1,
        cap_ratio=1, resample_positives=False, max_context=8)
    uses = Counter()
    for ex in mined:
        for mid in ex.negative_ids:
            row = index.mention_ids.index(mid)
            uses[index.entity_ids[row]] += 1
    assert uses["E9"] <= 1
    caps = {e: 1 * c for e, c in index.entity_positive_counts.items()}
    for entity, n in uses.items():
        assert n <= caps[entity]


def test_unindexed_entities_have_zero_cap(tiny_params, make_organic, make_index):
    spec = [("m0", "E1", ["alpha", "x"]),
            ("m1", "E1", ["alpha", "y"]),
            ("m2", "E2", ["alpha", "z"])]
    records = corpus(make_organic, spec)
    vectors = encode_records(tiny_params, records, max_context=8)
    # E2 has no positive count registered: it may never appear as a negative.
    index = make_index([e for _, e, _ in spec], vectors, counts={"E1": 2})
    mined, stats = mine_hard_negatives(
        tiny_params, index, [MentionPair("m0", "m1")], records,
        negatives_per_query=2, resample_positives=False, max_context=8)
    assert mined[0].negative_ids == ()
    assert stats.n_empty == 1
    assert stats.cap_skips > 0


def test_retrieval_widens_until_negatives_found(tiny_params, make_organic,
                                               make_index):
    # 60 same-entity rows crowd the initial retrieval window; the two
    # wrong-entity rows must still be found by widening.
    spec = [(f"m{i}", "E1", ["alpha", f"x{i}"]) for i in range(60)]
    spec += [("m60", "E2", ["omega", "a"]), ("m61", "E3", ["omega", "b"])]
    records = corpus(make_organic, spec)
    vectors = encode_records(tiny_params, records, max_context=8)
    index = make_index([e for _, e, _ in spec], vectors,
                       counts={"E1": 60, "E2": 5, "E3": 5})
    mined, _ = mine_hard_negatives(
        tiny_params, index, [MentionPair("m0", "m1")], records,
        negatives_per_query=2, resample_positives=False, max_context=8)
    assert set(mined[0].negative_ids) == {"m60", "m61"}


def test_two_mention_entity_resamples_to_the_other(tiny_params,
                                                   five_mention_setup):
    records, index = five_mention_setup
    mined, stats = mine_hard_negatives(
        tiny_params, index, [MentionPair("m0", "m1")], records,
        negatives_per_query=1, max_context=8)
    assert mined[0].positive_id == "m1"


def test_resampled_positive_is_argmax(tiny_params, make_organic, make_index):
    spec = [("m0", "E1", ["alpha", "x"]),
            ("m1", "E1", ["alpha", "x", "q"]),
            ("m2", "E1", ["omega", "r"]),
            ("m3", "E2", ["beta", "s"])]
    records = corpus(make_organic, spec)
    vectors = encode_records(tiny_params, records, max_context=8)
    index = make_index([e for _, e, _ in spec], vectors,
                       counts={"E1": 3, "E2": 1})
    q = encode_records(tiny_params, [records[0]], max_context=8)[0]
    scores = index.vectors @ q.astype(np.float32)
    same = [r for r in range(4) if index.entity_ids[r] == "E1" and r != 0]
    best = max(same, key=lambda r: (scores[r], -r))
    mined, stats = mine_hard_negatives(
        tiny_params, index, [MentionPair("m0", "m2")], records,
        negatives_per_query=1, max_context=8)
    assert mined[0].positive_id == index.mention_ids[best]


def test_resampling_can_be_disabled(tiny_params, five_mention_setup):
    records, index = five_mention_setup
    mined, _ = mine_hard_negatives(
        tiny_params, index, [MentionPair("m1", "m0")], records,
        negatives_per_query=1, resample_positives=False, max_context=8)
    assert mined[0].positive_id == "m0"


def test_results_in_sorted_query_order_and_deterministic(
        tiny_params, five_mention_setup):
    records, index = five_mention_setup
    pairs = [MentionPair("m4", "m0"), MentionPair("m0", "m1"),
             MentionPair("m2", "m3")]
    a, _ = mine_hard_negatives(tiny_params, index, pairs, records,
                               negatives_per_query=2, max_context=8)
    b, _ = mine_hard_negatives(tiny_params, index, pairs, records,
                               negatives_per_query=2, max_context=8)
    assert [ex.query_id for ex in a] == ["m0", "m2", "m4"]
    assert a == b


def test_unknown_pair_ids_rejected(tiny_params, five_mention_setup):
    records, index = five_mention_setup
    with pytest.raises(CorpusError, match="unknown mentions"):
        mine_hard_negatives(tiny_params, index,
                            [MentionPair("ghost", "m0")], records)


def test_argument_validation(tiny_params, five_mention_setup):
    records, index = five_mention_setup
    with pytest.raises(ValueError, match="negatives_per_query"):
        mine_hard_negatives(tiny_params, index, [], records,
                            negatives_per_query=0)
    with pytest.raises(ValueError, match="cap_ratio"):
        mine_hard_negatives(tiny_params, index, [], records, cap_ratio=0)


def test_mined_file_round_trip(tmp_path):
    mined = [MinedExample("q1", "p1", ("n1", "n2")),
             MinedExample("q2", "p2", ())]
    path = str(tmp_path / "mined.jsonl")
    write_mined(path, mined)
    assert read_mined(path) == mined


def test_mined_file_rejects_bad_lines(tmp_path):
    path = tmp_path / "mined.jsonl"
    path.write_text('{"query_id": "q1"}\n')
    with pytest.raises(CorpusError, match="mined.jsonl:1"):
        read_mined(str(path))


def test_to_train_examples_resolves_ids(make_organic):
    records = corpus(make_organic, [("m0", "E1", ["a"]), ("m1", "E1", ["b"]),
                                    ("m2", "E2", ["c"])])
    mined = [MinedExample("m0", "m1", ("m2",))]
    examples = to_train_examples(mined, records, vocab_size=64, max_context=8)
    assert len(examples) == 1
    assert len(examples[0].hard_negatives) == 1
    with pytest.raises(CorpusError):
        to_train_examples([MinedExample("m0", "nope", ())], records, 64)
