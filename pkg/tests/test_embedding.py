from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interest_retrieval.embedding import (
    DimensionMismatchError,
    EmbedderConfig,
    HashedEmbedder,
    embed_text,
    is_zero,
    make_embedder,
    read_vectors_jsonl,
    similarity,
    tokenize,
    write_vectors_jsonl,
)

from conftest import naive_cosine, naive_embed, random_titles

ABC = EmbedderConfig.for_vocabulary(["apple", "banana", "cherry"])


def test_tokenize_lowercases_and_drops_short_tokens():
    assert tokenize("Best-Camping TENT, a review_2024!") == ["best", "camping", "tent", "review", "2024"]
    assert tokenize("") == []


def test_vocab_counts_and_normalizes():
    vec = embed_text("apple apple banana", ABC)
    np.testing.assert_allclose(vec, np.array([2.0, 1.0, 0.0]) / math.sqrt(5), atol=1e-12)
    np.testing.assert_allclose(vec, [0.894, 0.447, 0.0], atol=1e-3)


def test_one_hot_and_empty():
    np.testing.assert_array_equal(embed_text("cherry", ABC), [0.0, 0.0, 1.0])
    assert is_zero(embed_text("", ABC))
    assert is_zero(embed_text("unknown words only", ABC))
    assert is_zero(embed_text("", EmbedderConfig()))


def test_similarity_examples():
    e = make_embedder(ABC)
    assert similarity(e.embed("apple banana"), e.embed("apple cherry")) == pytest.approx(0.5, abs=1e-12)
    assert similarity(np.array([1.0, 0, 0]), np.array([0, 1.0, 0])) == 0.0
    v = e.embed("banana cherry cherry")
    assert similarity(v, v) == pytest.approx(1.0, abs=1e-6)
    assert similarity(v, e.embed("")) == 0.0


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        similarity(np.ones(3), np.ones(4))


def test_config_validation():
    with pytest.raises(ValueError):
        EmbedderConfig(kind="vocab", dimension=2, vocabulary=("a", "b", "c"))
    with pytest.raises(ValueError):
        EmbedderConfig(kind="vocab", dimension=2, vocabulary=("a", "a"))
    with pytest.raises(ValueError):
        EmbedderConfig(kind="hashed", dimension=48)
    with pytest.raises(ValueError):
        EmbedderConfig(kind="bert")


def test_config_round_trip_and_fingerprint():
    for cfg in (ABC, EmbedderConfig(), EmbedderConfig(dimension=16, seed=3)):
        assert EmbedderConfig.from_dict(cfg.to_dict()) == cfg
    assert EmbedderConfig(seed=1).fingerprint != EmbedderConfig(seed=2).fingerprint
    assert ABC.fingerprint == EmbedderConfig.for_vocabulary(["apple", "banana", "cherry"]).fingerprint


def test_hashed_embedder_is_stable_and_seeded():
    a = HashedEmbedder(EmbedderConfig(dimension=64, seed=0))
    b = HashedEmbedder(EmbedderConfig(dimension=64, seed=0))
    text = "multi interest retrieval with hashed buckets"
    assert a.embed(text).tobytes() == b.embed(text).tobytes()
    assert 0 <= a.bucket("tent") < 64
    other = HashedEmbedder(EmbedderConfig(dimension=64, seed=9))
    assert any(a.bucket(w) != other.bucket(w) for w in ("tent", "stove", "lamp", "camp", "trail"))


def test_embed_batch_matches_embed(abc_embedder):
    texts = ["apple", "", "banana cherry"]
    batch = abc_embedder.embed_batch(texts)
    assert batch.shape == (3, 3)
    for row, text in zip(batch, texts):
        np.testing.assert_array_equal(row, abc_embedder.embed(text))
    assert abc_embedder.embed_batch([]).shape == (0, 3)


def test_vocab_cosine_matches_naive_double_loop_on_1000_pairs():
    rng = np.random.default_rng(11)
    vocab = [f"w{i:02d}" for i in range(40)]
    emb = make_embedder(EmbedderConfig.for_vocabulary(vocab))
    left = random_titles(rng, vocab, 1000)
    right = random_titles(rng, vocab, 1000)
    for a, b in zip(left, right):
        expected = naive_cosine(naive_embed(a, vocab), naive_embed(b, vocab))
        assert abs(similarity(emb.embed(a), emb.embed(b)) - expected) < 1e-9


texts = st.text(alphabet=st.sampled_from("abc xyz-"), max_size=30)


@settings(max_examples=200, deadline=None)
@given(texts, texts)
def test_properties(a, b):
    for cfg in (EmbedderConfig.for_vocabulary(["ab", "bc", "xyz", "aa", "cc"]), EmbedderConfig(dimension=8)):
        ea, eb = embed_text(a, cfg), embed_text(b, cfg)
        assert ea.tobytes() == embed_text(a, cfg).tobytes()
        if not is_zero(ea):
            assert abs(np.linalg.norm(ea) - 1.0) < 1e-6
        assert similarity(ea, eb) == similarity(eb, ea)
        assert abs(similarity(ea, eb)) <= 1 + 1e-6


def test_precomputed_vectors_round_trip(tmp_path):
    path = tmp_path / "vec.jsonl"
    write_vectors_jsonl(path, {"d1": np.array([3.0, 4.0]), "d2": np.array([0.0, 2.0])})
    loaded = read_vectors_jsonl(path, dimension=2)
    np.testing.assert_allclose(loaded["d1"], [0.6, 0.8])
    np.testing.assert_allclose(loaded["d2"], [0.0, 1.0])
    with pytest.raises(DimensionMismatchError):
        read_vectors_jsonl(path, dimension=3)
    path.write_text('{"doc_id": "x", "vector": [1, 2]}\n{"doc_id": "y"}\n')
    with pytest.raises(ValueError, match=":2:"):
        read_vectors_jsonl(path)
