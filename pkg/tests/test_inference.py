"""Entity ranking, voting, batch prediction, and prediction IO."""

import numpy as np
import pytest

from mentionlink.encoder import encode_records
from mentionlink.inference import (
    ALL_MENTIONS,
    TOP_PER_ENTITY,
    _predict_encoded,
    predict,
    predict_batch,
    read_predictions,
    write_predictions,
)
from mentionlink.quantized import QuantizerConfig, SearchParams, train_quantizer


def scored_vectors(scores, d=4):
    """Unit vectors whose dot with e0 equals the given scores."""
    rows = np.zeros((len(scores), d), dtype=np.float64)
    rows[:, 0] = scores
    rows[:, 1] = np.sqrt(1.0 - np.asarray(scores) ** 2)
    return rows


E0_QUERY = np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32)


def rank_for(index, *, mode=TOP_PER_ENTITY, k=1, top_n=10, weighted=True):
    pred = _predict_encoded(E0_QUERY, index, mode, k, top_n, weighted, None)
    return pred.ranked


def test_top_per_entity_keeps_best_mention(make_index):
    index = make_index(["E1", "E1", "E2"], scored_vectors([0.9, 0.8, 0.7]))
    ranked = rank_for(index)
    assert [r.entity_id for r in ranked] == ["E1", "E2"]
    assert [r.mention_id for r in ranked] == ["m0", "m2"]
    assert ranked[0].score == pytest.approx(0.9, rel=1e-6)
    assert ranked[1].score == pytest.approx(0.7, rel=1e-6)


def test_weighted_vote_sums_scores(make_index):
    index = make_index(["A", "B", "A"], scored_vectors([0.9, 0.85, 0.8]))
    ranked = rank_for(index, mode=ALL_MENTIONS, k=3)
    assert ranked[0].entity_id == "A"
    assert ranked[0].score == pytest.approx(1.7, rel=1e-6)
    assert ranked[0].mention_id == "m0"
    assert ranked[1].entity_id == "B"
    assert ranked[1].score == pytest.approx(0.85, rel=1e-6)


def test_unweighted_vote_counts_mentions(make_index):
    index = make_index(["A", "B", "B"], scored_vectors([0.9, 0.85, 0.8]))
    ranked = rank_for(index, mode=ALL_MENTIONS, k=3, weighted=False)
    assert ranked[0].entity_id == "B"
    assert ranked[0].score == 2.0
    assert ranked[0].mention_id == "m1"
    assert ranked[1].entity_id == "A"


def test_vote_tie_resolved_by_best_mention_score(make_index):
    index = make_index(["B", "A"], scored_vectors([0.9, 0.8]))
    ranked = rank_for(index, mode=ALL_MENTIONS, k=2, weighted=False)
    assert ranked[0].entity_id == "B"


def test_vote_tie_resolved_by_entity_id_last(make_index):
    # Identical vectors: one vote each and equal best scores, so the
    # ascending entity id decides.
    index = make_index(["B", "A"], scored_vectors([0.6, 0.6]))
    ranked = rank_for(index, mode=ALL_MENTIONS, k=2, weighted=False)
    assert ranked[0].entity_id == "A"
    assert ranked[1].entity_id == "B"


def test_single_vote_equals_top_per_entity(make_index):
    rng = np.random.default_rng(11)
    scores = rng.uniform(-0.9, 0.9, size=24)
    entities = [f"E{i % 6}" for i in range(24)]
    index = make_index(entities, scored_vectors(scores))
    vote = rank_for(index, mode=ALL_MENTIONS, k=1, top_n=6)
    top = rank_for(index, mode=TOP_PER_ENTITY, k=1, top_n=6)
    assert vote == top


def test_retrieval_widens_to_requested_entity_depth(make_index):
    # One entity dominates the neighborhood; depth-4 ranking must still
    # surface the three rare entities behind it.
    scores = [0.9 - 0.001 * i for i in range(40)] + [0.1, 0.05, 0.0]
    entities = ["A"] * 40 + ["B", "C", "D"]
    index = make_index(entities, scored_vectors(scores))
    ranked = rank_for(index, top_n=4)
    assert [r.entity_id for r in ranked] == ["A", "B", "C", "D"]


def test_argument_validation(tiny_params, make_organic, make_index):
    index = make_index(["A"], scored_vectors([0.5]))
    record = make_organic("q", "A", ["alpha", "x"])
    with pytest.raises(ValueError, match="mode"):
        predict(tiny_params, index, record, mode="nearest")
    with pytest.raises(ValueError, match=">= 1"):
        predict(tiny_params, index, record, k=0)
    with pytest.raises(ValueError, match=">= 1"):
        predict(tiny_params, index, record, top_n=0)


@pytest.fixture
def encoded_setup(tiny_params, make_organic, make_index):
    spec = [("m0", "E1", ["alpha", "x"]),
            ("m1", "E1", ["alpha", "y"]),
            ("m2", "E2", ["beta", "x"]),
            ("m3", "E3", ["gamma", "z"])]
    records = [make_organic(mid, ent, ctx) for mid, ent, ctx in spec]
    vectors = encode_records(tiny_params, records, max_context=8)
    index = make_index([e for _, e, _ in spec], vectors)
    return records, index


def test_predict_encodes_the_query(tiny_params, make_organic, encoded_setup):
    _, index = encoded_setup
    query = make_organic("q0", "E1", ["alpha", "x"])
    pred = predict(tiny_params, index, query, k=1, top_n=3)
    assert pred.ranked[0].entity_id == "E1"
    assert pred.ranked[0].mention_id == "m0"
    assert pred.ranked[0].score == pytest.approx(1.0, abs=1e-5)
    assert pred.entity_ids()[0] == "E1"


def test_batch_matches_sequential_and_keeps_order(tiny_params, make_organic,
                                                  encoded_setup):
    _, index = encoded_setup
    queries = [make_organic(f"q{i}", "E1", ["alpha", f"t{i}"])
               for i in range(6)]
    seq, err_seq = predict_batch(tiny_params, index, queries, k=2, threads=1)
    par, err_par = predict_batch(tiny_params, index, queries, k=2, threads=4)
    assert err_seq == err_par == []
    assert seq == par
    assert all(p is not None for p in seq)


def test_batch_collects_per_query_errors(tiny_params, make_organic):
    rng = np.random.default_rng(0)
    matrix = rng.standard_normal((32, 8)).astype(np.float32)
    bare = train_quantizer(matrix, QuantizerConfig(num_leaves=2, block_dim=2,
                                                   kmeans_iters=2))
    assert bare.base is None
    queries = [make_organic(f"q{i}", "E1", ["alpha"]) for i in range(3)]
    preds, errors = predict_batch(tiny_params, bare, queries)
    assert preds == [None, None, None]
    assert [i for i, _ in errors] == [0, 1, 2]
    assert all("base" in msg for _, msg in errors)


def test_prediction_file_round_trip(tmp_path, tiny_params, make_organic,
                                    encoded_setup):
    _, index = encoded_setup
    queries = [make_organic("q0", "E1", ["alpha", "x"]),
               make_organic("q1", "E2", ["beta", "x"])]
    preds, _ = predict_batch(tiny_params, index, queries, k=1, top_n=2)
    path = str(tmp_path / "preds.jsonl")
    write_predictions(path, queries, preds)
    rows = read_predictions(path)
    assert [r["query_id"] for r in rows] == ["q0", "q1"]
    assert rows[0]["gold_entity"] == "E1"
    assert rows[0]["predictions"][0]["entity_id"] == "E1"
    assert rows[0]["k"] == 1 and rows[0]["mode"] == TOP_PER_ENTITY


def test_prediction_file_skips_failed_queries(tmp_path, make_organic,
                                              tiny_params, encoded_setup):
    _, index = encoded_setup
    queries = [make_organic("q0", "E1", ["alpha", "x"]),
               make_organic("q1", "E2", ["beta", "x"])]
    preds, _ = predict_batch(tiny_params, index, queries)
    write_predictions(str(tmp_path / "p.jsonl"), queries, [preds[0], None])
    rows = read_predictions(str(tmp_path / "p.jsonl"))
    assert [r["query_id"] for r in rows] == ["q0"]


def test_quantized_full_probe_matches_exact_ranking(make_index):
    # Signed one-hot rows quantize losslessly to int8, and integer
    # queries give discrete scores, so an exhaustive probe with a full
    # rescore must reproduce the exact ranking, ties included.
    rng = np.random.default_rng(5)
    n, d = 60, 8
    rows = np.zeros((n, d), dtype=np.float32)
    rows[np.arange(n), rng.integers(0, d, size=n)] = rng.choice(
        [-1.0, 1.0], size=n)
    entities = [f"E{i % 5}" for i in range(n)]
    index = make_index(entities, rows)
    qidx = train_quantizer(index, QuantizerConfig(num_leaves=4, block_dim=2,
                                                  kmeans_iters=5, seed=0))
    search = SearchParams(leaves_to_probe=4, rescore_count=n, top_n=5)
    query = rng.integers(-3, 4, size=d).astype(np.float32)
    exact = _predict_encoded(query, index, TOP_PER_ENTITY, 1, 5, True, None)
    approx = _predict_encoded(query, qidx, TOP_PER_ENTITY, 1, 5, True, search)
    assert exact.entity_ids() == approx.entity_ids()
    assert ([r.mention_id for r in exact.ranked]
            == [r.mention_id for r in approx.ranked])
