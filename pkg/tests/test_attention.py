import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corefbridge import errors
from corefbridge.attention import (
    AttentionParams,
    AttentionScores,
    cross_attention,
    init_attention_params,
    pairwise_scores,
    scaled_dot_attention,
    similarity,
)


# --- independent dense-loop reference (no shared code with the package) ----

def ref_softmax_row(row):
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    s = sum(exps)
    return [v / s for v in exps]


def ref_matmul(A, B):
    n, k, m = len(A), len(B), len(B[0])
    return [[sum(A[i][t] * B[t][j] for t in range(k)) for j in range(m)]
            for i in range(n)]


def ref_attention(Q, K, V):
    dk = len(Q[0])
    logits = [[sum(Q[i][t] * K[j][t] for t in range(dk)) / math.sqrt(dk)
               for j in range(len(K))] for i in range(len(Q))]
    P = [ref_softmax_row(r) for r in logits]
    return ref_matmul(P, V)


def ref_cross(E_x, E_S, E_R, params):
    outs_per_head = []
    for h in range(params.n_heads):
        Q = ref_matmul(E_x, params.w_q[h].tolist())
        K = ref_matmul(E_S, params.w_k[h].tolist())
        V = ref_matmul(E_R, params.w_v[h].tolist())
        outs_per_head.append(ref_attention(Q, K, V))
    H = [sum((outs_per_head[h][i] for h in range(params.n_heads)), [])
         for i in range(len(E_x))]
    return ref_matmul(H, params.w_o.tolist())


def ref_hierarchical(E_x, E_S, E_R, params, sentence_ids):
    Q = ref_matmul(E_x, params.w_q[0].tolist())
    K = ref_matmul(E_S, params.w_k[0].tolist())
    V = ref_matmul(E_R, params.w_v[0].tolist())
    dk = params.d_k
    n = len(E_x)
    group_keys = sorted(set(sentence_ids))
    groups = [[i for i in range(n) if sentence_ids[i] == g] for g in group_keys]
    H1 = [None] * n
    for idx in groups:
        logits = [[sum(Q[i][t] * K[j][t] for t in range(dk)) / math.sqrt(dk)
                   for j in idx] for i in idx]
        P = [ref_softmax_row(r) for r in logits]
        for a, i in enumerate(idx):
            H1[i] = [sum(P[a][b] * V[j][t] for b, j in enumerate(idx))
                     for t in range(dk)]
    U = [[sum(H1[i][t] for i in idx) / len(idx) for t in range(dk)]
         for idx in groups]
    logits2 = [[sum(Q[i][t] * U[g][t] for t in range(dk)) / math.sqrt(dk)
                for g in range(len(groups))] for i in range(n)]
    P2 = [ref_softmax_row(r) for r in logits2]
    H2 = ref_matmul(P2, U)
    H = [[H1[i][t] + H2[i][t] for t in range(dk)] for i in range(n)]
    return ref_matmul(H, params.w_o.tolist())


# --- similarity -------------------------------------------------------------

class TestSimilarity:
    def test_cosine_self_is_one(self):
        u = np.array([3.0, -1.0, 2.0])
        assert similarity(u, u, "cosine") == pytest.approx(1.0, abs=1e-12)

    def test_scaled_dot_orthonormal(self):
        e1 = np.array([1.0, 0.0, 0.0, 0.0])
        e2 = np.array([0.0, 1.0, 0.0, 0.0])
        assert similarity(e1, e2, "scaled_dot") == 0.0

    def test_scaled_dot_hand_value(self):
        val = similarity(np.array([1.0, 2.0]), np.array([3.0, 4.0]), "scaled_dot")
        assert val == pytest.approx(11.0 / math.sqrt(2.0), rel=1e-15)

    def test_cosine_zero_vector(self):
        assert similarity(np.zeros(3), np.ones(3), "cosine") == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(errors.ShapeMismatch):
            similarity(np.ones(3), np.ones(4), "cosine")


# --- pairwise scores --------------------------------------------------------

class TestPairwiseScores:
    def test_two_mentions_forced_to_one(self):
        scores = pairwise_scores(np.random.default_rng(0).normal(size=(2, 4)))
        assert scores.a[0, 1] == pytest.approx(1.0, abs=1e-12)
        assert scores.a[1, 0] == pytest.approx(1.0, abs=1e-12)

    def test_identical_reprs_symmetric(self):
        reprs = np.tile(np.array([1.0, 2.0, 3.0]), (3, 1))
        scores = pairwise_scores(reprs)
        off = scores.a[~np.eye(3, dtype=bool)]
        assert np.allclose(off, 0.5, atol=1e-12)

    def test_hand_chosen_similarities(self):
        # d=1 scaled dot: sim(1,2)=1, sim(1,3)=0 -> A12 = e/(e+1)
        reprs = np.array([[1.0], [1.0], [0.0]])
        scores = pairwise_scores(reprs, "scaled_dot")
        assert scores.a[0, 1] == pytest.approx(math.e / (math.e + 1.0), rel=1e-12)

    def test_single_mention_zero_row(self):
        scores = pairwise_scores(np.array([[1.0, 2.0]]))
        assert scores.n == 1 and scores.a[0, 0] == 0.0

    def test_nonfinite_rejected(self):
        with pytest.raises(errors.NonFiniteInput):
            pairwise_scores(np.array([[np.nan, 1.0], [0.0, 1.0]]))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 2**31 - 1),
           st.sampled_from(["scaled_dot", "cosine"]))
    def test_rows_sum_to_one_diagonal_zero(self, n, seed, kind):
        reprs = np.random.default_rng(seed).normal(size=(n, 8))
        scores = pairwise_scores(reprs, kind)
        assert np.allclose(scores.a.sum(axis=1), 1.0, atol=1e-9)
        assert not np.diagonal(scores.a).any()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 10), st.integers(0, 2**31 - 1))
    def test_permutation_equivariance(self, n, seed):
        rng = np.random.default_rng(seed)
        reprs = rng.normal(size=(n, 6))
        perm = rng.permutation(n)
        a = pairwise_scores(reprs).a
        b = pairwise_scores(reprs[perm]).a
        assert np.array_equal(a[np.ix_(perm, perm)], b)

    def test_cosine_rescaling_invariance(self):
        rng = np.random.default_rng(7)
        reprs = rng.normal(size=(5, 8))
        scaled = reprs.copy()
        scaled[2] *= 1234.5
        a = pairwise_scores(reprs, "cosine").a
        b = pairwise_scores(scaled, "cosine").a
        assert np.allclose(a, b, atol=1e-12)

    def test_stability_huge_similarities(self):
        reprs = np.array([[1e4, 0.0], [-1e4, 0.0], [0.0, 1e4]]) * math.sqrt(2)
        scores = pairwise_scores(reprs, "scaled_dot")
        assert np.isfinite(scores.a).all()
        assert np.allclose(scores.a.sum(axis=1), 1.0, atol=1e-9)


# --- scaled dot attention ---------------------------------------------------

class TestScaledDotAttention:
    def test_single_key_returns_value(self):
        Q = np.random.default_rng(1).normal(size=(3, 4))
        K = np.random.default_rng(2).normal(size=(1, 4))
        V = np.array([[5.0, -2.0]])
        out = scaled_dot_attention(Q, K, V)
        assert np.allclose(out, np.tile(V, (3, 1)), atol=1e-12)

    def test_identical_keys_give_column_mean(self):
        Q = np.random.default_rng(3).normal(size=(2, 4))
        K = np.tile(np.array([1.0, 0.0, 2.0, -1.0]), (5, 1))
        V = np.random.default_rng(4).normal(size=(5, 3))
        out = scaled_dot_attention(Q, K, V)
        assert np.allclose(out, np.tile(V.mean(axis=0), (2, 1)), atol=1e-12)

    def test_two_by_two_hand_case(self):
        Q = np.array([[1.0, 0.0], [0.0, 1.0]])
        K = np.array([[2.0, 0.0], [0.0, 2.0]])
        V = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = scaled_dot_attention(Q, K, V)
        w = math.exp(2.0 / math.sqrt(2.0))
        p = w / (w + 1.0)
        expected = np.array([[p, 1.0 - p], [1.0 - p, p]])
        assert np.allclose(out, expected, atol=1e-12)

    def test_reference_agreement(self):
        rng = np.random.default_rng(11)
        Q, K, V = rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
        out = scaled_dot_attention(Q, K, V)
        ref = np.array(ref_attention(Q.tolist(), K.tolist(), V.tolist()))
        assert np.allclose(out, ref, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_output_is_convex_combination(self, m, n, seed):
        rng = np.random.default_rng(seed)
        Q, K, V = rng.normal(size=(m, 3)), rng.normal(size=(n, 3)), rng.normal(size=(n, 4))
        out = scaled_dot_attention(Q, K, V)
        lo, hi = V.min(axis=0), V.max(axis=0)
        assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()

    def test_shape_errors(self):
        with pytest.raises(errors.ShapeMismatch):
            scaled_dot_attention(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 2)))
        with pytest.raises(errors.ShapeMismatch):
            scaled_dot_attention(np.ones((2, 3)), np.ones((2, 3)), np.ones((3, 2)))


# --- cross attention --------------------------------------------------------

class TestCrossAttention:
    def test_zero_values_projection_gives_zeros(self):
        d, dk = 6, 3
        params = init_attention_params("cross", d, d_k=dk, seed=0)
        for h in range(params.n_heads):
            params.w_v[h] = np.zeros((d, dk))
        params.w_o = np.eye(dk, d) * 0 + np.eye(dk, d)   # identity-shaped
        rng = np.random.default_rng(0)
        E = rng.normal(size=(4, d))
        out = cross_attention(E, E, E, params)
        assert np.allclose(out, 0.0, atol=1e-15)

    def test_self_attention_single_row(self):
        d, dk = 4, 2
        params = init_attention_params("self_attn", d, d_k=dk, seed=3)
        params.w_o = np.random.default_rng(5).normal(size=(dk, d))
        x = np.random.default_rng(6).normal(size=(1, d))
        out = cross_attention(x, np.zeros_like(x), np.zeros_like(x), params)
        expected = (x @ params.w_v[0]) @ params.w_o
        assert np.allclose(out, expected, atol=1e-12)

    @pytest.mark.parametrize("mechanism,n_heads", [("cross", 1),
                                                   ("self_attn", 1),
                                                   ("multi_head", 3)])
    def test_matches_dense_loop_reference(self, mechanism, n_heads):
        d, dk, n = 5, 2, 3
        params = init_attention_params(mechanism, d, d_k=dk, n_heads=n_heads,
                                       seed=17)
        params.w_o = np.random.default_rng(23).normal(size=params.w_o.shape)
        rng = np.random.default_rng(29)
        E_x, E_S, E_R = (rng.normal(size=(n, d)) for _ in range(3))
        out = cross_attention(E_x, E_S, E_R, params)
        if mechanism == "self_attn":
            ref = ref_cross(E_x.tolist(), E_x.tolist(), E_x.tolist(), params)
        else:
            ref = ref_cross(E_x.tolist(), E_S.tolist(), E_R.tolist(), params)
        assert np.allclose(out, np.array(ref), atol=1e-12)

    def test_hierarchical_matches_reference(self):
        d, dk = 4, 3
        params = init_attention_params("hierarchical", d, d_k=dk, seed=31)
        params.w_o = np.random.default_rng(37).normal(size=params.w_o.shape)
        rng = np.random.default_rng(41)
        n = 7
        E_x, E_S, E_R = (rng.normal(size=(n, d)) for _ in range(3))
        sent = [0, 0, 0, 1, 1, 2, 2]
        out = cross_attention(E_x, E_S, E_R, params,
                              sentence_ids=np.array(sent))
        ref = ref_hierarchical(E_x.tolist(), E_S.tolist(), E_R.tolist(),
                               params, sent)
        assert np.allclose(out, np.array(ref), atol=1e-12)

    def test_vanilla_is_parameter_free(self):
        params = AttentionParams(mechanism="vanilla")
        rng = np.random.default_rng(43)
        E_x, E_S, E_R = (rng.normal(size=(3, 4)) for _ in range(3))
        out = cross_attention(E_x, E_S, E_R, params)
        logits = (E_x @ E_S.T) / math.sqrt(4)
        P = np.exp(logits - logits.max(axis=1, keepdims=True))
        P /= P.sum(axis=1, keepdims=True)
        assert np.allclose(out, P @ E_R, atol=1e-12)

    def test_row_count_mismatch(self):
        params = AttentionParams(mechanism="vanilla")
        with pytest.raises(errors.ShapeMismatch):
            cross_attention(np.ones((3, 4)), np.ones((2, 4)), np.ones((3, 4)),
                            params)

    def test_dk_heads_budget_enforced(self):
        with pytest.raises(errors.InvalidConfig):
            init_attention_params("multi_head", d=4, d_k=8, n_heads=3).validate(4)


class TestAttentionScoresType:
    def test_validate_accepts_good_scores(self):
        scores = pairwise_scores(np.random.default_rng(0).normal(size=(5, 4)))
        scores.validate()

    def test_validate_rejects_bad_diagonal(self):
        a = np.full((2, 2), 0.5)
        with pytest.raises(errors.NonFiniteInput):
            AttentionScores(n=2, a=a).validate()
