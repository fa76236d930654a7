import numpy as np
import pytest

from corefbridge import errors
from corefbridge.corpus import ROOT, Document, Token, build_tree, gen_synthetic
from corefbridge.embeddings import (
    EmbeddingMatrix,
    ProviderConfig,
    embed_document,
    feature_hash_embed,
    hash_embed_label,
    remote_embed,
    role_matrix,
)

from mock_embed_server import MockEmbedServer


def doc_from_words(words, upos=None, doc_id="d"):
    """Single-sentence document; every token hangs off the last one."""
    n = len(words)
    upos = upos or ["NOUN"] * n
    toks = tuple(
        Token(index=i, surface=words[i], upos=upos[i],
              head=(ROOT if i == n - 1 else n - 1),
              deprel=("root" if i == n - 1 else "dep"))
        for i in range(n)
    )
    return Document(id=doc_id, sentences=(toks,), trees=(build_tree(0, toks),),
                    mentions=())


class TestFeatureHash:
    def test_rows_are_unit_norm(self):
        doc = doc_from_words(["a", "b", "c", "d"])
        m = feature_hash_embed(doc, dim=16, window=2, seed=1)
        norms = np.linalg.norm(m.data, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-12)

    def test_single_token_document(self):
        doc = doc_from_words(["only"])
        m = feature_hash_embed(doc, dim=8, window=2, seed=0)
        assert m.rows == 1 and abs(np.linalg.norm(m.data[0]) - 1.0) < 1e-12

    def test_deterministic(self):
        doc = doc_from_words(["a", "b", "c"])
        m1 = feature_hash_embed(doc, dim=32, window=1, seed=5)
        m2 = feature_hash_embed(doc, dim=32, window=1, seed=5)
        assert m1.data.tobytes() == m2.data.tobytes()

    def test_seed_changes_matrix(self):
        doc = doc_from_words(["a", "b", "c"])
        m1 = feature_hash_embed(doc, dim=32, window=1, seed=5)
        m2 = feature_hash_embed(doc, dim=32, window=1, seed=6)
        assert not np.array_equal(m1.data, m2.data)

    def test_window_zero_ignores_context(self):
        doc = doc_from_words(["x", "same", "y", "same", "z"])
        m = feature_hash_embed(doc, dim=16, window=0, seed=2)
        # identical (surface, upos, deprel) triples -> identical rows
        assert np.array_equal(m.data[1], m.data[3])

    def test_window_two_sees_context(self):
        doc = doc_from_words(["x", "same", "y", "q", "same", "z"])
        m = feature_hash_embed(doc, dim=64, window=2, seed=2)
        assert not np.array_equal(m.data[1], m.data[4])

    def test_edit_outside_window_leaves_row_unchanged(self):
        a = doc_from_words(["a", "b", "c", "d", "e", "f"])
        b = doc_from_words(["a", "b", "c", "d", "e", "CHANGED"])
        ma = feature_hash_embed(a, dim=32, window=2, seed=3)
        mb = feature_hash_embed(b, dim=32, window=2, seed=3)
        # token 2 is more than `window` away from the edited position 5
        assert np.array_equal(ma.data[2], mb.data[2])
        assert not np.array_equal(ma.data[4], mb.data[4])

    def test_dim_too_small_rejected(self):
        doc = doc_from_words(["a"])
        with pytest.raises(errors.InvalidConfig):
            feature_hash_embed(doc, dim=4, window=0, seed=0)


class TestRoleMatrix:
    def test_role_fallback_to_deprel(self):
        toks = (
            Token(index=0, surface="a", upos="NOUN", head=1, deprel="nsubj",
                  role="agent"),
            Token(index=1, surface="b", upos="VERB", head=ROOT, deprel="root"),
        )
        doc = Document(id="d", sentences=(toks,), trees=(build_tree(0, toks),),
                       mentions=())
        m = role_matrix(doc, dim=16, seed=0)
        assert np.array_equal(m[0], hash_embed_label("agent", 16, 0))
        assert np.array_equal(m[1], hash_embed_label("root", 16, 0))

    def test_distinct_labels_distinct_vectors(self):
        a = hash_embed_label("agent", 32, 0)
        b = hash_embed_label("patient", 32, 0)
        assert abs(float(a @ b)) < 0.99


class TestEmbedDocument:
    def test_provider_dispatch_and_norms(self):
        doc = gen_synthetic(seed=1, n_docs=1)[0]
        cfg = ProviderConfig(kind="feature_hash", dim=24, window=2, seed=7)
        m = embed_document(cfg, doc)
        assert m.rows == doc.n_tokens and m.dim == 24
        assert np.allclose(np.linalg.norm(m.data, axis=1), 1.0, atol=1e-12)

    def test_remote_requires_endpoint(self):
        with pytest.raises(errors.InvalidConfig):
            embed_document(ProviderConfig(kind="remote"), doc_from_words(["a"]))


class TestRemote:
    def setup_method(self):
        self.doc = doc_from_words(["a", "b", "c"])

    def test_zero_matrix_accepted(self):
        def fn(payload):
            n = sum(len(s) for s in payload["sentences"])
            return [[0.0] * 8 for _ in range(n)]

        with MockEmbedServer(fn, dim=8) as srv:
            cfg = ProviderConfig(kind="remote", dim=8, endpoint=srv.url)
            m = remote_embed(cfg, self.doc)
            assert m.rows == 3 and not m.data.any()

    def test_short_matrix_dimension_mismatch(self):
        def fn(payload):
            n = sum(len(s) for s in payload["sentences"])
            return [[1.0] * 8 for _ in range(n)]

        with MockEmbedServer(fn, dim=8) as srv:
            srv.mode = "short_rows"
            cfg = ProviderConfig(kind="remote", dim=8, endpoint=srv.url)
            with pytest.raises(errors.DimensionMismatch):
                remote_embed(cfg, self.doc)

    def test_nan_entry_rejected(self):
        def fn(payload):
            n = sum(len(s) for s in payload["sentences"])
            return [[1.0] * 8 for _ in range(n)]

        with MockEmbedServer(fn, dim=8) as srv:
            srv.mode = "nan"
            cfg = ProviderConfig(kind="remote", dim=8, endpoint=srv.url)
            with pytest.raises(errors.NonFiniteEmbedding):
                remote_embed(cfg, self.doc)

    def test_timeout(self):
        def fn(payload):
            return [[1.0] * 8 for _ in range(3)]

        with MockEmbedServer(fn, dim=8) as srv:
            srv.mode = "sleep"
            srv.sleep_s = 0.8
            cfg = ProviderConfig(kind="remote", dim=8, endpoint=srv.url,
                                 timeout_ms=100)
            with pytest.raises(errors.Timeout):
                remote_embed(cfg, self.doc)

    def test_http_error_means_unavailable(self):
        def fn(payload):
            return []

        with MockEmbedServer(fn, dim=8) as srv:
            srv.mode = "http_error"
            cfg = ProviderConfig(kind="remote", dim=8, endpoint=srv.url)
            with pytest.raises(errors.RemoteUnavailable):
                remote_embed(cfg, self.doc)

    def test_unreachable_endpoint(self):
        cfg = ProviderConfig(kind="remote", dim=8,
                             endpoint="http://127.0.0.1:1", timeout_ms=500)
        with pytest.raises((errors.RemoteUnavailable, errors.Timeout)):
            remote_embed(cfg, self.doc)


class TestEmbeddingMatrix:
    def test_validate_rejects_nan(self):
        m = EmbeddingMatrix(np.array([[np.nan, 0.0]]))
        with pytest.raises(errors.NonFiniteEmbedding):
            m.validate()

    def test_validate_row_count(self):
        m = EmbeddingMatrix(np.zeros((2, 4)))
        with pytest.raises(errors.DimensionMismatch):
            m.validate(expected_rows=3)
