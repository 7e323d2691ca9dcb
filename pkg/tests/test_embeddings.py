"""Vector ops, exact top-k, and the binary matrix format."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pseudopair.embeddings import (
    FeatureMatrix,
    cosine_sim,
    load_embeddings,
    normalize,
    save_embeddings,
    top_k,
    top_k_batch,
)
from pseudopair.errors import (
    BadMagicError,
    DimMismatchError,
    KOutOfRangeError,
    NonFiniteValueError,
    TruncatedFileError,
    ZeroVectorError,
)

from conftest import unit_rows


# ---------------------------------------------------------------------------
# normalize / cosine
# ---------------------------------------------------------------------------


def test_normalize_three_four_five():
    np.testing.assert_array_equal(normalize([3.0, 4.0]), np.array([0.6, 0.8], dtype=np.float32))


def test_normalize_identity_on_unit_vector():
    v = np.array([1.0, 0.0, 0.0], dtype=np.float32)
    np.testing.assert_array_equal(normalize(v), v)


def test_normalize_zero_vector_raises():
    with pytest.raises(ZeroVectorError):
        normalize([0.0, 0.0])


def test_normalize_output_dtype():
    assert normalize([1.0, 2.0, 3.0]).dtype == np.float32


@given(
    st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=32),
    st.floats(1e-3, 1e3),
)
def test_normalize_scale_invariant_and_unit(values, scale):
    v = np.asarray(values, dtype=np.float32)
    if float(np.linalg.norm(v.astype(np.float64))) < 1e-6:
        return
    u = normalize(v)
    assert abs(float(np.linalg.norm(u.astype(np.float64))) - 1.0) <= 1e-6
    np.testing.assert_allclose(normalize(scale * v), u, atol=1e-6)


def test_cosine_orthogonal():
    assert cosine_sim([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_cosine_identical():
    assert cosine_sim([1.0, 0.0], [1.0, 0.0]) == 1.0


def test_cosine_hand_value():
    assert cosine_sim([0.6, 0.8], [1.0, 0.0]) == pytest.approx(0.6)


def test_cosine_zero_vector_raises():
    with pytest.raises(ZeroVectorError):
        cosine_sim([0.0, 0.0], [1.0, 0.0])


# ---------------------------------------------------------------------------
# FeatureMatrix validation
# ---------------------------------------------------------------------------


def test_matrix_rejects_duplicate_ids():
    with pytest.raises(DimMismatchError):
        FeatureMatrix(rows=np.eye(2, dtype=np.float32), ids=["a", "a"])


def test_matrix_rejects_nan():
    rows = np.array([[1.0, np.nan]], dtype=np.float32)
    with pytest.raises(NonFiniteValueError):
        FeatureMatrix(rows=rows, ids=["a"])


def test_matrix_rejects_false_unit_flag():
    rows = np.array([[3.0, 4.0]], dtype=np.float32)
    with pytest.raises(DimMismatchError):
        FeatureMatrix(rows=rows, ids=["a"], unit_normalized=True)


def test_matrix_id_lookup():
    m = FeatureMatrix(rows=np.eye(3, dtype=np.float32), ids=["x", "y", "z"])
    assert m.index_of("y") == 1
    assert m.count == 3 and m.dim == 3


# ---------------------------------------------------------------------------
# top-k
# ---------------------------------------------------------------------------


def _corpus3():
    rows = np.array(
        [[1.0, 0.0], [0.0, 1.0], [0.70710678, 0.70710678]], dtype=np.float32
    )
    return FeatureMatrix(rows=rows, ids=["a", "b", "c"], unit_normalized=True)


def test_top_k_hand_case():
    hit = top_k(np.array([1.0, 0.0]), _corpus3(), k=2)
    np.testing.assert_array_equal(hit.indices, [0, 2])
    assert hit.scores[0] == pytest.approx(1.0)
    assert hit.scores[1] == pytest.approx(0.70710678)
    assert hit.ids == ["a", "c"]


def test_top_k_full_is_sorted_permutation():
    corpus = _corpus3()
    hit = top_k(np.array([0.2, 0.9]), corpus, k=3)
    assert sorted(hit.indices.tolist()) == [0, 1, 2]
    assert np.all(np.diff(hit.scores) <= 0)


def test_top_k_ties_break_to_lower_index():
    rows = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]], dtype=np.float32)
    corpus = FeatureMatrix(rows=rows, ids=["far", "dup0", "dup1"], unit_normalized=True)
    hit = top_k(np.array([1.0, 0.0]), corpus, k=2)
    np.testing.assert_array_equal(hit.indices, [1, 2])


def test_top_k_query_scale_invariance():
    corpus = _corpus3()
    a = top_k(np.array([0.3, 0.1]), corpus, k=3)
    b = top_k(np.array([30.0, 10.0]), corpus, k=3)
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_allclose(a.scores, b.scores, atol=1e-9)


def test_top_k_k_out_of_range():
    corpus = _corpus3()
    with pytest.raises(KOutOfRangeError):
        top_k(np.array([1.0, 0.0]), corpus, k=0)
    with pytest.raises(KOutOfRangeError):
        top_k(np.array([1.0, 0.0]), corpus, k=4)


def test_top_k_zero_query_raises():
    with pytest.raises(ZeroVectorError):
        top_k(np.array([0.0, 0.0]), _corpus3(), k=1)


def _brute_force(query, rows, k):
    q = np.asarray(query, dtype=np.float64)
    q = q / np.linalg.norm(q)
    r = rows.astype(np.float64)
    sims = (r @ q) / np.linalg.norm(r, axis=1)
    return np.argsort(-sims, kind="stable")[:k]


@pytest.mark.parametrize("seed", range(5))
def test_top_k_matches_brute_force_oracle(seed):
    # 512-dim corpus vs an independently coded full-sort oracle
    rows = unit_rows(1000, 512, seed)
    corpus = FeatureMatrix(rows=rows, ids=[f"r{i}" for i in range(1000)], unit_normalized=True)
    g = np.random.default_rng(seed + 100)
    query = g.standard_normal(512).astype(np.float32)
    hit = top_k(query, corpus, k=10)
    np.testing.assert_array_equal(hit.indices, _brute_force(query, rows, 10))


def test_top_k_batch_matches_single_queries():
    rows = unit_rows(50, 16, 1)
    corpus = FeatureMatrix(rows=rows, ids=[f"r{i}" for i in range(50)], unit_normalized=True)
    queries = np.random.default_rng(2).standard_normal((7, 16)).astype(np.float32)
    batch = top_k_batch(queries, corpus, k=5)
    for q, hit in zip(queries, batch):
        single = top_k(q, corpus, k=5)
        np.testing.assert_array_equal(hit.indices, single.indices)
        np.testing.assert_allclose(hit.scores, single.scores)


def test_top_k_unnormalized_corpus():
    rows = np.array([[2.0, 0.0], [0.0, 5.0]], dtype=np.float32)
    corpus = FeatureMatrix(rows=rows, ids=["x", "y"])
    hit = top_k(np.array([0.0, 1.0]), corpus, k=1)
    assert hit.ids == ["y"]
    assert hit.scores[0] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# EMB1 io
# ---------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    rows = np.random.default_rng(3).standard_normal((3, 4)).astype(np.float32)
    m = FeatureMatrix(rows=rows, ids=["a", "b", "c"])
    p = tmp_path / "m.emb1"
    save_embeddings(p, m)
    back = load_embeddings(p)
    np.testing.assert_array_equal(back.rows, rows)
    assert back.ids == ["a", "b", "c"]
    assert back.unit_normalized is False


def test_save_load_preserves_unit_flag(tmp_path):
    m = FeatureMatrix(rows=unit_rows(4, 8, 0), ids=list("abcd"), unit_normalized=True)
    p = tmp_path / "u.emb1"
    save_embeddings(p, m)
    assert load_embeddings(p).unit_normalized is True


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(1, 6),
    d=st.integers(1, 9),
    seed=st.integers(0, 2**31 - 1),
)
def test_round_trip_bit_exact(tmp_path_factory, n, d, seed):
    rows = np.random.default_rng(seed).standard_normal((n, d)).astype(np.float32)
    m = FeatureMatrix(rows=rows, ids=[f"id{i}" for i in range(n)])
    p = tmp_path_factory.mktemp("rt") / "m.emb1"
    save_embeddings(p, m)
    back = load_embeddings(p)
    assert back.rows.tobytes() == rows.tobytes()
    assert back.ids == m.ids


def test_load_bad_magic(tmp_path):
    p = tmp_path / "bad.emb1"
    p.write_bytes(b"XXXX" + bytes(13))
    with pytest.raises(BadMagicError):
        load_embeddings(p)


def test_load_truncated_payload(tmp_path):
    m = FeatureMatrix(rows=np.ones((10, 3), dtype=np.float32), ids=[f"i{k}" for k in range(10)])
    p = tmp_path / "t.emb1"
    save_embeddings(p, m)
    blob = p.read_bytes()
    p.write_bytes(blob[: len(blob) - 12])  # drop one row
    with pytest.raises(TruncatedFileError):
        load_embeddings(p)


def test_load_truncated_header(tmp_path):
    p = tmp_path / "h.emb1"
    p.write_bytes(b"EMB1\x02")
    with pytest.raises(TruncatedFileError):
        load_embeddings(p)


def test_load_trailing_bytes(tmp_path):
    m = FeatureMatrix(rows=np.ones((2, 2), dtype=np.float32), ids=["a", "b"])
    p = tmp_path / "x.emb1"
    save_embeddings(p, m)
    p.write_bytes(p.read_bytes() + b"\x00\x00")
    with pytest.raises(DimMismatchError):
        load_embeddings(p)


def test_load_non_finite_payload(tmp_path):
    m = FeatureMatrix(rows=np.ones((1, 2), dtype=np.float32), ids=["a"])
    p = tmp_path / "nan.emb1"
    save_embeddings(p, m)
    blob = bytearray(p.read_bytes())
    blob[-4:] = np.array([np.nan], dtype="<f4").tobytes()
    p.write_bytes(bytes(blob))
    with pytest.raises(NonFiniteValueError):
        load_embeddings(p)


def test_load_missing_sidecar_warns(tmp_path):
    m = FeatureMatrix(rows=np.ones((2, 2), dtype=np.float32), ids=["a", "b"])
    p = tmp_path / "s.emb1"
    save_embeddings(p, m)
    (tmp_path / "s.emb1.ids.json").unlink()
    with pytest.warns(UserWarning):
        back = load_embeddings(p)
    assert back.ids == ["row_0", "row_1"]


def test_load_sidecar_count_mismatch(tmp_path):
    m = FeatureMatrix(rows=np.ones((2, 2), dtype=np.float32), ids=["a", "b"])
    p = tmp_path / "c.emb1"
    save_embeddings(p, m)
    (tmp_path / "c.emb1.ids.json").write_text(json.dumps(["a"]))
    with pytest.raises(DimMismatchError):
        load_embeddings(p)


def test_loaded_rows_are_writable(tmp_path):
    m = FeatureMatrix(rows=np.ones((1, 2), dtype=np.float32), ids=["a"])
    p = tmp_path / "w.emb1"
    save_embeddings(p, m)
    back = load_embeddings(p)
    back.rows[0, 0] = 5.0  # must not blow up on a frombuffer view
