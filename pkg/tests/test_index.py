"""Exact-search index: selection rule, construction, persistence."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mentionlink.errors import ArtifactFormatError
from mentionlink.exact_index import (
    MentionIndex,
    build_index,
    load_index,
    save_index,
    search_exact,
    search_exact_rows,
    top_n_indices,
)


def reference_top_n(scores, n, tiebreak=None):
    """Independent selection: full sort by (-score, tiebreak), truncate."""
    if tiebreak is None:
        tiebreak = list(range(len(scores)))
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], tiebreak[i]))
    return order[:min(n, len(scores))]


@given(st.lists(st.integers(min_value=0, max_value=3), min_size=1, max_size=30),
       st.integers(min_value=1, max_value=35))
def test_top_n_matches_reference_with_ties(values, n):
    scores = np.asarray(values, dtype=np.float32)
    got = top_n_indices(scores, n)
    assert got.tolist() == reference_top_n(values, n)


@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 9)),
                min_size=1, max_size=20),
       st.integers(min_value=1, max_value=8))
def test_top_n_custom_tiebreak(pairs, n):
    scores = np.asarray([p[0] for p in pairs], dtype=np.float64)
    tiebreak = np.asarray([p[1] for p in pairs])
    got = top_n_indices(scores, n, tiebreak=tiebreak)
    want = sorted(range(len(pairs)),
                  key=lambda i: (-scores[i], tiebreak[i], i))[:n]
    # Rows tied on both score and tiebreak may come back in either order;
    # compare the (score, tiebreak) sequence instead of raw positions.
    assert [(scores[i], tiebreak[i]) for i in got] == \
        [(scores[i], tiebreak[i]) for i in want]


def test_top_n_boundary_ties_all_sorted():
    scores = np.array([1.0, 0.5, 0.5, 0.5, 0.2])
    # Three rows tie at the n=2 boundary: lowest index wins.
    assert top_n_indices(scores, 2).tolist() == [0, 1]
    assert top_n_indices(scores, 3).tolist() == [0, 1, 2]


def test_build_index_filters_descriptions(tiny_params, make_organic,
                                          make_description):
    records = [make_organic(f"m{i}", f"E{i % 3}", ["a", "b"], span=(0, 1))
               for i in range(10)]
    records += [make_description(f"d{i}", f"E{i}", ["x"]) for i in range(2)]
    with_desc = build_index(tiny_params, records, include_descriptions=True,
                            max_context=8)
    without = build_index(tiny_params, records, include_descriptions=False,
                          max_context=8)
    assert len(with_desc) == 12
    assert len(without) == 10
    # Positive counts cover organic mentions only, in both modes.
    assert with_desc.entity_positive_counts == without.entity_positive_counts
    assert with_desc.entity_positive_counts == {"E0": 4, "E1": 3, "E2": 3}


def test_build_index_rows_are_unit_norm(tiny_params, make_organic):
    records = [make_organic(f"m{i}", "E1", [f"w{i}"], span=(0, 1))
               for i in range(6)]
    index = build_index(tiny_params, records, max_context=8)
    np.testing.assert_allclose(np.linalg.norm(index.vectors, axis=1), 1.0,
                               atol=1e-6)
    assert index.vectors.dtype == np.float32


def test_build_index_deterministic(tiny_params, make_organic):
    records = [make_organic(f"m{i}", "E1", [f"w{i}", "c"], span=(0, 1))
               for i in range(6)]
    a = build_index(tiny_params, records, max_context=8)
    b = build_index(tiny_params, records, max_context=8)
    np.testing.assert_array_equal(a.vectors, b.vectors)


def test_index_vectors_write_protected(make_index):
    index = make_index(["E1", "E2"], [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        index.vectors[0, 0] = 5.0


def test_misaligned_labels_rejected():
    with pytest.raises(ValueError, match="misaligned"):
        MentionIndex(np.eye(2, dtype=np.float32), ("m0",), ("E0", "E1"),
                     ("aa", "aa"), ("organic", "organic"), {})


def test_non_unit_rows_rejected():
    with pytest.raises(ValueError, match="unit-norm"):
        MentionIndex(np.eye(2, dtype=np.float32) * 2.0, ("m0", "m1"),
                     ("E0", "E1"), ("aa", "aa"), ("organic", "organic"), {})


def test_self_match_scores_one(make_index):
    rng = np.random.default_rng(0)
    vectors = rng.normal(size=(20, 8))
    index = make_index([f"E{i}" for i in range(20)], vectors)
    rows, scores = search_exact_rows(index, index.vectors[7], 3)
    assert rows[0] == 7
    assert scores[0] == pytest.approx(1.0, abs=1e-6)


def test_top_n_larger_than_index_clamps(make_index):
    index = make_index(["E1", "E2"], [[1.0, 0.0], [0.0, 1.0]])
    rows, scores = search_exact_rows(index, np.array([1.0, 0.0]), 10)
    assert rows.shape == (2,)


def test_search_matches_reference_scan(make_index):
    rng = np.random.default_rng(1)
    vectors = rng.normal(size=(1000, 16))
    index = make_index([f"E{i % 50}" for i in range(1000)], vectors)
    for qseed in range(5):
        q = np.random.default_rng(100 + qseed).normal(size=16).astype(np.float32)
        rows, scores = search_exact_rows(index, q, 25)
        ref_scores = index.vectors.astype(np.float64) @ q.astype(np.float64)
        ref = sorted(range(1000), key=lambda i: (-ref_scores[i], i))[:25]
        assert rows.tolist() == ref
        np.testing.assert_allclose(scores,
                                   (index.vectors @ q)[rows], rtol=0)


def test_search_exact_returns_labels(make_index):
    index = make_index(["E1", "E2"], [[1.0, 0.0], [0.0, 1.0]],
                       languages=["aa", "bb"])
    hits = search_exact(index, np.array([0.0, 1.0], dtype=np.float32), 2)
    assert hits[0] == ("m1", "E2", pytest.approx(1.0))
    assert hits[1][0] == "m0"


def test_search_rejects_bad_args(make_index):
    index = make_index(["E1"], [[1.0, 0.0]])
    with pytest.raises(ValueError, match="top_n"):
        search_exact_rows(index, np.array([1.0, 0.0]), 0)
    empty = MentionIndex(np.zeros((0, 2), dtype=np.float32), (), (), (), (), {})
    with pytest.raises(ValueError, match="empty"):
        search_exact_rows(empty, np.array([1.0, 0.0]), 1)


def test_rows_by_entity_partitions(make_index):
    index = make_index(["E1", "E2", "E1"],
                       [[1, 0], [0, 1], [1, 1]])
    groups = index.rows_by_entity()
    assert groups["E1"].tolist() == [0, 2]
    assert groups["E2"].tolist() == [1]


def test_save_load_round_trip(tmp_path, make_index):
    rng = np.random.default_rng(2)
    index = make_index([f"E{i % 4}" for i in range(30)],
                       rng.normal(size=(30, 8)),
                       languages=[("aa", "bb")[i % 2] for i in range(30)])
    path = str(tmp_path / "index.midx")
    save_index(path, index)
    loaded = load_index(path)
    np.testing.assert_array_equal(loaded.vectors, index.vectors)
    assert loaded.mention_ids == index.mention_ids
    assert loaded.entity_ids == index.entity_ids
    assert loaded.languages == index.languages
    assert loaded.sources == index.sources
    assert loaded.entity_positive_counts == index.entity_positive_counts
    # Round-tripping again is byte-identical.
    path2 = str(tmp_path / "again.midx")
    save_index(path2, loaded)
    assert open(path, "rb").read() == open(path2, "rb").read()


def test_load_rejects_wrong_magic(tmp_path):
    path = tmp_path / "junk.midx"
    path.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(ArtifactFormatError, match="not a mention index"):
        load_index(str(path))


def test_load_rejects_future_version(tmp_path, make_index):
    index = make_index(["E1"], [[1.0, 0.0]])
    path = tmp_path / "index.midx"
    save_index(str(path), index)
    blob = bytearray(path.read_bytes())
    blob[4] = 250
    path.write_bytes(bytes(blob))
    with pytest.raises(ArtifactFormatError, match="version"):
        load_index(str(path))


def test_truncated_index_file(tmp_path, make_index):
    index = make_index(["E1", "E2"], [[1.0, 0.0], [0.0, 1.0]])
    path = tmp_path / "index.midx"
    save_index(str(path), index)
    path.write_bytes(path.read_bytes()[:24])
    with pytest.raises(EOFError):
        load_index(str(path))
