import numpy as np
import pytest

from apptriage.embedding import (DimensionMismatchError, EmbeddingError, HashingLogEmbedder, RemoteEmbeddingProvider,
                                 embed_batch, hash_embed)

from conftest import rec


def test_shape_and_determinism():
    emb = HashingLogEmbedder()
    records = [rec(i, ip=f"10.0.0.{i}") for i in range(5)]
    X = embed_batch(emb, records)
    assert X.shape == (5, 64)
    again = embed_batch(emb, [records[2], records[2]])
    assert np.array_equal(again[0], again[1])
    assert np.array_equal(again[0], X[2])


def test_unit_norm():
    rng = np.random.default_rng(0)
    for i in range(200):
        r = rec(i, ip=f"10.{rng.integers(256)}.0.1", operation=f"op{rng.integers(50)}")
        assert abs(np.linalg.norm(hash_embed(r)) - 1.0) <= 1e-9


def test_empty_record_is_first_basis_vector():
    r = rec(0, log_type="", ip="", operation="", resource="", result_code="", actor="")
    expected = np.zeros(64)
    expected[0] = 1.0
    assert np.array_equal(hash_embed(r), expected)


def test_ip_change_moves_vector():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a, b = rng.integers(0, 256, size=(2, 4))
        ip_a, ip_b = ".".join(map(str, a)), ".".join(map(str, b))
        if ip_a == ip_b:
            continue
        assert not np.array_equal(hash_embed(rec(0, ip=ip_a)), hash_embed(rec(0, ip=ip_b)))


def test_timestamp_ignored():
    assert np.array_equal(hash_embed(rec(0)), hash_embed(rec(999)))


def test_batch_independence():
    emb = HashingLogEmbedder(dim=32)
    r = [rec(i, operation=f"a{i}") for i in range(7)]
    s = [rec(i, operation=f"b{i}") for i in range(4)]
    assert np.array_equal(embed_batch(emb, r + s), np.vstack([embed_batch(emb, r), embed_batch(emb, s)]))


def test_sklearn_transform_matches_embed():
    records = [rec(i, ip=f"10.0.0.{i}") for i in range(3)]
    emb = HashingLogEmbedder(dim=16)
    assert np.array_equal(emb.fit_transform(records), emb.embed(records))


def test_remote_success(scripted_server):
    vectors = [[0.5] * 8, [0.25] * 8]
    with scripted_server([(200, {"embeddings": vectors})]) as srv:
        provider = RemoteEmbeddingProvider(srv.url, dim=8, backoff=0)
        X = embed_batch(provider, [rec(0), rec(1, ip="10.0.0.2")])
    assert np.allclose(X, vectors)
    assert len(srv.requests[0]["inputs"]) == 2


def test_remote_wrong_dim(scripted_server):
    with scripted_server([(200, [[0.1] * 7])]) as srv:
        provider = RemoteEmbeddingProvider(srv.url, dim=8, backoff=0)
        with pytest.raises(DimensionMismatchError):
            embed_batch(provider, [rec(0)])


def test_remote_retries_then_succeeds(scripted_server):
    with scripted_server([(503, {}), (429, {}), (200, [[1.0, 0.0]])]) as srv:
        provider = RemoteEmbeddingProvider(srv.url, dim=2, retries=3, backoff=0)
        X = embed_batch(provider, [rec(0)])
    assert X.tolist() == [[1.0, 0.0]]
    assert len(srv.requests) == 3


def test_remote_exhausts_retries(scripted_server):
    with scripted_server([(500, {})]) as srv:
        provider = RemoteEmbeddingProvider(srv.url, dim=2, retries=2, backoff=0)
        with pytest.raises(EmbeddingError):
            embed_batch(provider, [rec(0)])
    assert len(srv.requests) == 3


def test_remote_client_error_not_retried(scripted_server):
    with scripted_server([(400, {})]) as srv:
        provider = RemoteEmbeddingProvider(srv.url, dim=2, retries=3, backoff=0)
        with pytest.raises(EmbeddingError):
            embed_batch(provider, [rec(0)])
    assert len(srv.requests) == 1
