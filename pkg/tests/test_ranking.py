import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchmine import (
    EmbeddingCorpus,
    RankConfig,
    ValidationError,
    build_rank_slice,
    load_slice,
    save_slice,
    score_block,
    top_select,
)

from helpers import full_sort_slice_oracle, random_corpus


def corpus_with_row0_scores(scores):
    """Dot-similarity corpus where sim(0, j) equals scores[j]."""
    n = len(scores)
    positives = np.eye(n, dtype=np.float32)
    queries = np.ones((n, n), dtype=np.float32) * 0.1
    queries[0] = scores
    return EmbeddingCorpus(task_id="t", queries=queries, positives=positives)


def test_score_block_identity_cosine():
    eye = np.eye(2, dtype=np.float32)
    c = EmbeddingCorpus(task_id="t", queries=eye, positives=eye)
    s = score_block(c, (0, 2), RankConfig(p=0, m=1))
    assert np.allclose(s, np.eye(2), atol=1e-7)


def test_score_block_diagonal_symmetry():
    q = np.array([[1.0, 1.0]], dtype=np.float32)
    p = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
    c = EmbeddingCorpus(task_id="t", queries=np.vstack([q, q]), positives=p)
    s = score_block(c, (0, 1), RankConfig(p=0, m=1))
    assert np.allclose(s, [[0.70710678, 0.70710678]], atol=1e-6)


def test_score_block_matches_dense_oracle():
    c = random_corpus(5, 4, seed=11)
    cfg = RankConfig(p=0, m=2)
    s = score_block(c, (0, 5), cfg)
    qn = c.queries / np.linalg.norm(c.queries.astype(np.float64), axis=1, keepdims=True)
    pn = c.positives / np.linalg.norm(c.positives.astype(np.float64), axis=1, keepdims=True)
    assert np.abs(s - qn @ pn.T).max() < 1e-6


def test_top_select_basic():
    assert top_select(np.array([0.1, 0.9, 0.5]), 2).tolist() == [1, 2]


def test_top_select_all_ties():
    assert top_select(np.array([0.3, 0.3, 0.3]), 2).tolist() == [0, 1]


def test_top_select_matches_full_sort_oracle():
    rng = np.random.default_rng(0)
    row = rng.standard_normal(10000).astype(np.float32)
    got = top_select(row, 130)
    oracle = np.lexsort((np.arange(row.size), -row))[:130]
    assert np.array_equal(got, oracle)


def test_top_select_heavy_ties_matches_oracle():
    rng = np.random.default_rng(1)
    row = (rng.integers(0, 5, size=500) / 4.0).astype(np.float32)
    for k in (1, 7, 100, 499):
        got = top_select(row, k)
        oracle = np.lexsort((np.arange(row.size), -row))[:k]
        assert np.array_equal(got, oracle)


def test_build_rank_slice_hand_example_p0():
    c = corpus_with_row0_scores([0.2, 0.9, 0.5, 0.7])
    cfg = RankConfig(p=0, m=2, similarity="dot")
    slc = build_rank_slice(c, cfg)
    assert slc.candidates[0].tolist() == [1, 3]


def test_build_rank_slice_hand_example_p1():
    c = corpus_with_row0_scores([0.2, 0.9, 0.5, 0.7])
    cfg = RankConfig(p=1, m=2, similarity="dot")
    slc = build_rank_slice(c, cfg)
    assert slc.candidates[0].tolist() == [3, 2]
    assert slc.excluded_row(0).tolist() == [0, 1]


def test_slice_matches_full_sort_oracle_medium():
    c = random_corpus(1000, 8, seed=4)
    cfg = RankConfig(p=30, m=100)
    slc = build_rank_slice(c, cfg)
    oracle, excl = full_sort_slice_oracle(c, cfg)
    assert np.array_equal(slc.candidates, oracle)
    for i in range(c.n):
        assert set(slc.excluded_row(i).tolist()) == excl[i]


def test_slice_classification_golden_label_filter():
    c = random_corpus(60, 6, seed=9, task_category="classification", n_labels=4)
    cfg = RankConfig(p=0, m=20)
    slc = build_rank_slice(c, cfg)
    oracle, excl = full_sort_slice_oracle(c, cfg)
    assert np.array_equal(slc.candidates, oracle)
    for i in range(c.n):
        own = c.labels[i]
        assert all(c.labels[j] != own for j in slc.candidates[i])
        assert set(slc.excluded_row(i).tolist()) == excl[i]
    # filter removals = own class size
    sizes = {lab: c.labels.count(lab) for lab in set(c.labels)}
    for i in range(c.n):
        assert slc.excluded_counts[i] == sizes[c.labels[i]]


def test_slice_with_exact_ties_matches_oracle():
    rng = np.random.default_rng(5)
    q = (rng.integers(1, 4, size=(40, 6)) / 2.0).astype(np.float32)
    p = (rng.integers(1, 4, size=(40, 6)) / 2.0).astype(np.float32)
    c = EmbeddingCorpus(task_id="t", queries=q, positives=p)
    cfg = RankConfig(p=3, m=10, similarity="dot")
    slc = build_rank_slice(c, cfg)
    oracle, _ = full_sort_slice_oracle(c, cfg)
    assert np.array_equal(slc.candidates, oracle)


def test_insufficient_survivors_names_row():
    c = random_corpus(10, 4, seed=2)
    with pytest.raises(ValidationError, match="p \\+ m"):
        build_rank_slice(c, RankConfig(p=5, m=5))
    labels = tuple("a" for _ in range(10))
    c2 = EmbeddingCorpus(
        task_id="t",
        queries=c.queries,
        positives=c.positives,
        task_category="classification",
        labels=labels,
    )
    with pytest.raises(ValidationError, match="row 0"):
        build_rank_slice(c2, RankConfig(p=0, m=5))


def test_block_size_invariance_bitwise():
    c = random_corpus(300, 8, seed=6)
    cfg_small = RankConfig(p=10, m=40, block_size=7)
    cfg_big = RankConfig(p=10, m=40, block_size=4096)
    a = build_rank_slice(c, cfg_small)
    b = build_rank_slice(c, cfg_big)
    assert np.array_equal(a.candidates, b.candidates)
    assert np.array_equal(a.excluded_indices, b.excluded_indices)


def test_determinism_across_runs():
    c = random_corpus(200, 8, seed=8)
    cfg = RankConfig(p=5, m=30)
    a = build_rank_slice(c, cfg)
    b = build_rank_slice(c, cfg)
    assert np.array_equal(a.candidates, b.candidates)


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_scaling_invariance_cosine(seed):
    c = random_corpus(50, 6, seed=seed)
    cfg = RankConfig(p=2, m=10)
    base = build_rank_slice(c, cfg)
    rng = np.random.default_rng(seed + 1)
    scale = np.exp2(rng.integers(-3, 4, size=50)).astype(np.float32)
    scaled = EmbeddingCorpus(
        task_id="t",
        queries=c.queries * scale[:, None],
        positives=c.positives,
    )
    assert np.array_equal(build_rank_slice(scaled, cfg).candidates, base.candidates)


def test_slice_file_roundtrip(tmp_path):
    c = random_corpus(80, 8, seed=12, task_category="classification", n_labels=5)
    slc = build_rank_slice(c, RankConfig(p=0, m=15))
    path = tmp_path / "s.bin"
    save_slice(slc, path)
    back = load_slice(path)
    assert back.task_id == slc.task_id
    assert back.p == slc.p and back.m == slc.m and back.n == slc.n
    assert np.array_equal(back.candidates, slc.candidates)
    assert np.array_equal(back.excluded_indptr, slc.excluded_indptr)
    assert np.array_equal(back.excluded_indices, slc.excluded_indices)


def test_rank_config_validation():
    with pytest.raises(ValidationError):
        RankConfig(p=-1, m=5)
    with pytest.raises(ValidationError):
        RankConfig(p=0, m=0)
    with pytest.raises(ValidationError):
        RankConfig(p=0, m=5, similarity="euclid")
    RankConfig(p=3, m=5).validate_for(9)
    with pytest.raises(ValidationError):
        RankConfig(p=3, m=6).validate_for(9)


def test_for_category_defaults():
    assert RankConfig.for_category("retrieval").p == 30
    assert RankConfig.for_category("grounding").p == 30
    assert RankConfig.for_category("vqa").p == 70
    assert RankConfig.for_category("classification").p == 0
    assert RankConfig.for_category("retrieval").m == 100
