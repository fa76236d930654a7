import numpy as np
import pytest

from corefbridge import errors
from corefbridge.corpus import ROOT, Token, parse_conllu
from corefbridge.embeddings import EmbeddingMatrix
from corefbridge.syntax import (
    Inventories,
    SyntaxProjection,
    enhance,
    extract_features,
    feature_matrix,
    vectorize,
)
from test_corpus import CAT, make_doc


INV = Inventories(deprel=("det", "nsubj", "punct", "root", "dep", "nmod"),
                  upos=("DET", "NOUN", "PUNCT", "VERB"))


class TestExtractFeatures:
    def test_root_token(self):
        doc = parse_conllu(CAT)[0]
        feats = extract_features(doc, INV)
        slept = feats[2]
        assert slept.depth == 0
        assert not slept.path_bag.any()
        assert not slept.head_upos_onehot.any()

    def test_chain_tree_depths(self):
        # a <- b <- c with c the root
        doc = make_doc([1, 2, ROOT])
        feats = extract_features(doc, INV)
        assert [f.depth for f in feats] == [2, 1, 0]

    def test_cat_child_counts(self):
        doc = parse_conllu(CAT)[0]
        feats = extract_features(doc, INV)
        assert feats[2].child_counts == (1, 1)   # "slept": cat left, "." right
        assert feats[1].child_counts == (1, 0)   # "cat": The

    def test_path_bag_contents(self):
        doc = parse_conllu(CAT)[0]
        feats = extract_features(doc, INV)
        the = feats[0]       # path: det, nsubj
        assert the.depth == 2
        assert the.path_bag[INV.deprel.index("det")] == 1
        assert the.path_bag[INV.deprel.index("nsubj")] == 1
        assert the.path_bag.sum() == 2

    def test_path_truncated_from_root_side(self):
        # chain of 12 tokens, each headed by the next; deepest path is capped
        # at the 8 labels nearest the token
        heads = list(range(1, 12)) + [ROOT]
        doc = make_doc(heads, deprels=["dep"] * 11 + ["root"])
        feats = extract_features(doc, INV)
        assert feats[0].depth == 11
        assert feats[0].path_bag.sum() == 8

    def test_out_of_inventory_maps_to_zero(self):
        doc = make_doc([1, ROOT], deprels=["weird", "root"])
        feats = extract_features(doc, INV)
        assert not feats[0].deprel_onehot.any()

    def test_vectorize_layout(self):
        doc = parse_conllu(CAT)[0]
        feats = extract_features(doc, INV)
        vec = vectorize(feats[0])
        assert vec.shape == (INV.feature_dim(),)
        assert vec[0] == pytest.approx(feats[0].depth / 8.0)
        assert vec[-2:] == pytest.approx([0.0, 0.0])


class TestEnhance:
    def test_zero_projection_is_identity(self):
        doc = parse_conllu(CAT)[0]
        feats = extract_features(doc, INV)
        E = EmbeddingMatrix(np.random.default_rng(0).normal(size=(4, 6)))
        proj = SyntaxProjection.zeros(INV.feature_dim(), 6)
        out = enhance(E, feats, proj)
        assert out.data.tobytes() == E.data.tobytes()

    def test_bias_only(self):
        doc = make_doc([1, ROOT])
        feats = extract_features(doc, INV)
        E = EmbeddingMatrix(np.zeros((2, 3)))
        proj = SyntaxProjection(weight=np.zeros((INV.feature_dim(), 3)),
                                bias=np.array([1.0, -2.0, 0.5]))
        out = enhance(E, feats, proj)
        assert np.allclose(out.data, np.tile(proj.bias, (2, 1)))

    def test_hand_multiplication(self):
        inv = Inventories(deprel=("dep", "root"), upos=("NOUN",))
        doc = make_doc([1, ROOT])
        feats = extract_features(doc, inv)
        fd = inv.feature_dim()
        E = EmbeddingMatrix(np.array([[1.0, 2.0], [3.0, 4.0]]))
        weight = np.zeros((fd, 2))
        weight[0] = [10.0, 20.0]      # depth slot
        weight[1] = [1.0, -1.0]       # deprel "dep" slot
        proj = SyntaxProjection(weight=weight, bias=np.array([0.5, 0.5]))
        out = enhance(E, feats, proj)
        phi0 = vectorize(feats[0])
        expected0 = [
            1.0 + phi0[0] * 10.0 + phi0[1] * 1.0 + 0.5,
            2.0 + phi0[0] * 20.0 + phi0[1] * -1.0 + 0.5,
        ]
        assert np.allclose(out.data[0], expected0, atol=1e-15)

    def test_linear_in_projection(self):
        rng = np.random.default_rng(5)
        doc = parse_conllu(CAT)[0]
        feats = extract_features(doc, INV)
        fd = INV.feature_dim()
        E = EmbeddingMatrix(rng.normal(size=(4, 5)))
        zero = EmbeddingMatrix(np.zeros((4, 5)))
        p1 = SyntaxProjection(rng.normal(size=(fd, 5)), rng.normal(size=5))
        p2 = SyntaxProjection(rng.normal(size=(fd, 5)), rng.normal(size=5))
        alpha, beta = 0.7, -1.3
        combo = SyntaxProjection(alpha * p1.weight + beta * p2.weight,
                                 alpha * p1.bias + beta * p2.bias)
        lhs = enhance(E, feats, combo).data
        rhs = (E.data
               + alpha * enhance(zero, feats, p1).data
               + beta * enhance(zero, feats, p2).data)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_shape_mismatch(self):
        doc = parse_conllu(CAT)[0]
        feats = extract_features(doc, INV)
        E = EmbeddingMatrix(np.zeros((4, 3)))
        proj = SyntaxProjection.zeros(INV.feature_dim(), 5)
        with pytest.raises(errors.ShapeMismatch):
            enhance(E, feats, proj)
        with pytest.raises(errors.ShapeMismatch):
            enhance(E, feats[:2], SyntaxProjection.zeros(INV.feature_dim(), 3))


class TestInventories:
    def test_collected_sorted_and_complete(self):
        doc = parse_conllu(CAT)[0]
        inv = Inventories.from_documents([doc])
        assert inv.deprel == ("det", "nsubj", "punct", "root")
        assert inv.upos == ("DET", "NOUN", "PUNCT", "VERB")

    def test_feature_matrix_shape(self):
        doc = parse_conllu(CAT)[0]
        m = feature_matrix(doc, INV)
        assert m.shape == (4, INV.feature_dim())
