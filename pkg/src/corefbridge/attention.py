"""Attention machinery: pairwise candidate scores and token cross-attention.

``pairwise_scores`` turns mention representations into a row-stochastic
candidate matrix (softmax over all other mentions, diagonal excluded).
``cross_attention`` mixes token embeddings with syntactic keys and semantic
values under one of five mechanisms; forward passes return caches so the
training module can backpropagate through them without re-deriving shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidConfig, NonFiniteInput, ShapeMismatch

MECHANISMS = ("vanilla", "self_attn", "multi_head", "cross", "hierarchical")


@dataclass(frozen=True)
class AttentionScores:
    n: int
    a: np.ndarray

    def validate(self) -> None:
        if self.a.shape != (self.n, self.n):
            raise ShapeMismatch(f"scores shape {self.a.shape} for n={self.n}")
        if self.n == 0:
            return
        if np.diagonal(self.a).any():
            raise NonFiniteInput("nonzero diagonal in attention scores")
        if self.n == 1:
            if self.a[0, 0] != 0.0:
                raise NonFiniteInput("singleton row must be zero")
            return
        sums = self.a.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise NonFiniteInput(f"row sums deviate from 1: {sums}")
        if (self.a < 0).any() or (self.a > 1).any():
            raise NonFiniteInput("entries outside [0, 1]")


@dataclass
class AttentionParams:
    mechanism: str = "cross"
    n_heads: int = 1
    d_k: int = 0                       # 0 means "no learned projections" (vanilla)
    w_q: list = field(default_factory=list)   # per head, d x d_k
    w_k: list = field(default_factory=list)
    w_v: list = field(default_factory=list)
    w_o: Optional[np.ndarray] = None          # (n_heads*d_k) x d

    def validate(self, d: int) -> None:
        if self.mechanism not in MECHANISMS:
            raise InvalidConfig(f"unknown mechanism {self.mechanism!r}")
        if self.mechanism == "vanilla":
            return
        if self.n_heads < 1 or self.d_k < 1:
            raise InvalidConfig("n_heads and d_k must be positive")
        if self.d_k * self.n_heads > 4 * d:
            raise InvalidConfig(
                f"d_k*n_heads = {self.d_k * self.n_heads} exceeds 4d = {4 * d}"
            )
        for mats in (self.w_q, self.w_k, self.w_v):
            if len(mats) != self.n_heads:
                raise ShapeMismatch("one projection per head required")
            for m in mats:
                if m.shape != (d, self.d_k):
                    raise ShapeMismatch(f"projection shape {m.shape}, want {(d, self.d_k)}")
        if self.w_o is None or self.w_o.shape != (self.n_heads * self.d_k, d):
            raise ShapeMismatch("w_o shape mismatch")


def init_attention_params(mechanism: str, d: int, d_k: int = 0,
                          n_heads: int = 1, seed: int = 0) -> AttentionParams:
    """Seeded initialization: uniform +/-sqrt(6/(fan_in+fan_out)) projections.

    The output projection starts at zero so a fresh attention stage is an
    exact no-op on the residual path; it picks up magnitude only through
    training.
    """
    if mechanism == "vanilla":
        return AttentionParams(mechanism="vanilla", n_heads=1, d_k=0)
    if mechanism != "multi_head":
        n_heads = 1
    if d_k <= 0:
        d_k = max(1, d // 2 if mechanism != "multi_head" else d // n_heads)
    rng = np.random.default_rng(seed)
    bound = math.sqrt(6.0 / (d + d_k))

    def mat():
        return rng.uniform(-bound, bound, size=(d, d_k))

    params = AttentionParams(
        mechanism=mechanism, n_heads=n_heads, d_k=d_k,
        w_q=[mat() for _ in range(n_heads)],
        w_k=[mat() for _ in range(n_heads)],
        w_v=[mat() for _ in range(n_heads)],
        w_o=np.zeros((n_heads * d_k, d)),
    )
    params.validate(d)
    return params


def similarity(u: np.ndarray, v: np.ndarray, kind: str = "scaled_dot") -> float:
    """Pair similarity: (u.v)/sqrt(d), or cosine (0 for a zero vector)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeMismatch(f"vector shapes {u.shape} vs {v.shape}")
    if kind == "scaled_dot":
        return float(u @ v) / math.sqrt(u.shape[0])
    if kind == "cosine":
        nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        return float(u @ v) / (nu * nv)
    raise InvalidConfig(f"unknown similarity kind {kind!r}")


def row_norms(m: np.ndarray) -> np.ndarray:
    # dtype-preserving (np.linalg.norm downcasts extended precision)
    return np.sqrt((m * m).sum(axis=1))


def similarity_matrix(reprs: np.ndarray, kind: str) -> np.ndarray:
    if kind == "scaled_dot":
        return (reprs @ reprs.T) / math.sqrt(reprs.shape[1])
    if kind == "cosine":
        norms = row_norms(reprs)
        safe = np.where(norms == 0.0, norms.dtype.type(1.0), norms)
        unit = reprs / safe[:, None]
        return unit @ unit.T
    raise InvalidConfig(f"unknown similarity kind {kind!r}")


def pairwise_scores(reprs: np.ndarray, kind: str = "scaled_dot") -> AttentionScores:
    """Row-stochastic candidate scores over all other mentions.

    Row i is softmax over sim(c_i, c_j) for j != i, computed with per-row
    max subtraction; a single mention yields the all-zero row.
    """
    reprs = np.asarray(reprs, dtype=np.result_type(reprs, np.float64))
    if reprs.ndim != 2:
        raise ShapeMismatch(f"expected n x d matrix, got {reprs.shape}")
    if not np.isfinite(reprs).all():
        raise NonFiniteInput("mention representations contain NaN/Inf")
    n = reprs.shape[0]
    if n == 0:
        return AttentionScores(n=0, a=np.zeros((0, 0), dtype=reprs.dtype))
    if n == 1:
        return AttentionScores(n=1, a=np.zeros((1, 1), dtype=reprs.dtype))
    sims = similarity_matrix(reprs, kind)
    np.fill_diagonal(sims, -np.inf)
    shifted = sims - sims.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    np.fill_diagonal(weights, 0.0)
    if weights.dtype == np.float64:
        # fsum is exactly rounded, so row sums (hence A) do not depend on
        # mention order: permuting the input permutes A bit-exactly.
        sums = np.array([math.fsum(row) for row in weights])
    else:
        sums = weights.sum(axis=1)
    a = weights / sums[:, None]
    np.fill_diagonal(a, 0.0)
    scores = AttentionScores(n=n, a=a)
    scores.validate()
    return scores


def _row_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=1, keepdims=True)


def scaled_dot_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """softmax(Q.K^T / sqrt(d_k)) V with row-wise softmax over the keys."""
    Q, K, V = (np.asarray(m, dtype=np.float64) for m in (Q, K, V))
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ShapeMismatch("Q, K, V must be matrices")
    if Q.shape[1] != K.shape[1]:
        raise ShapeMismatch(f"Q dim {Q.shape[1]} != K dim {K.shape[1]}")
    if K.shape[0] != V.shape[0]:
        raise ShapeMismatch(f"{K.shape[0]} keys vs {V.shape[0]} values")
    for m in (Q, K, V):
        if not np.isfinite(m).all():
            raise NonFiniteInput("attention input contains NaN/Inf")
    p = _row_softmax((Q @ K.T) / math.sqrt(Q.shape[1]))
    return p @ V


def cross_attention(E_x: np.ndarray, E_S: np.ndarray, E_R: np.ndarray,
                    params: AttentionParams,
                    sentence_ids: Optional[np.ndarray] = None) -> np.ndarray:
    """Mechanism-dispatched attention over token embeddings.

    Queries come from the token embeddings, keys from the syntactic context,
    values from the semantic context (``self_attn`` folds both back onto the
    token embeddings).  Returns an n x d matrix.
    """
    out, _ = cross_attention_with_cache(E_x, E_S, E_R, params, sentence_ids)
    return out


def cross_attention_with_cache(E_x, E_S, E_R, params: AttentionParams,
                               sentence_ids=None):
    """Forward pass that also returns intermediates for backpropagation."""
    E_x, E_S, E_R = (np.asarray(m, dtype=np.result_type(m, np.float64))
                     for m in (E_x, E_S, E_R))
    if not (E_x.shape[0] == E_S.shape[0] == E_R.shape[0]):
        raise ShapeMismatch("row counts of E_x, E_S, E_R must agree")
    n, d = E_x.shape
    params.validate(d)

    if params.mechanism == "self_attn":
        E_S = E_R = E_x
    cache = {"E_x": E_x, "E_S": E_S, "E_R": E_R, "heads": []}

    if params.mechanism == "vanilla":
        p = _row_softmax((E_x @ E_S.T) / math.sqrt(d))
        cache["heads"].append({"P": p, "Q": E_x, "K": E_S, "V": E_R})
        return p @ E_R, cache

    if params.mechanism == "hierarchical":
        return _hierarchical(E_x, E_S, E_R, params, sentence_ids, cache)

    head_outs = []
    for h in range(params.n_heads):
        Q = E_x @ params.w_q[h]
        K = E_S @ params.w_k[h]
        V = E_R @ params.w_v[h]
        p = _row_softmax((Q @ K.T) / math.sqrt(params.d_k))
        head_outs.append(p @ V)
        cache["heads"].append({"P": p, "Q": Q, "K": K, "V": V})
    H = np.concatenate(head_outs, axis=1)
    cache["H"] = H
    return H @ params.w_o, cache


def _hierarchical(E_x, E_S, E_R, params, sentence_ids, cache):
    """Two-stage variant: attention within each sentence, then attention of
    every token over mean-pooled sentence summaries.  This realization is the
    engine's own definition of the hierarchical mechanism."""
    n = E_x.shape[0]
    if sentence_ids is None:
        sentence_ids = np.zeros(n, dtype=np.int64)
    sentence_ids = np.asarray(sentence_ids)
    groups = [np.flatnonzero(sentence_ids == s) for s in np.unique(sentence_ids)]

    Q = E_x @ params.w_q[0]
    K = E_S @ params.w_k[0]
    V = E_R @ params.w_v[0]
    scale = math.sqrt(params.d_k)

    H1 = np.zeros((n, params.d_k), dtype=Q.dtype)
    stage1 = []
    for idx in groups:
        p = _row_softmax((Q[idx] @ K[idx].T) / scale)
        H1[idx] = p @ V[idx]
        stage1.append({"idx": idx, "P": p})
    U = np.stack([H1[idx].mean(axis=0) for idx in groups])
    P2 = _row_softmax((Q @ U.T) / scale)
    H2 = P2 @ U
    H = H1 + H2
    cache["heads"].append({"Q": Q, "K": K, "V": V, "stage1": stage1,
                           "U": U, "P2": P2, "H1": H1, "groups": groups})
    cache["H"] = H
    return H @ params.w_o, cache
