"""Antecedent decisions: pair scoring and chain assembly.

Every mention may link to one earlier mention (its antecedent) or start a
new chain.  Pair probabilities come from a logistic decoder over a fixed
feature layout combining the candidate-attention scores with syntactic pair
evidence; links are closed transitively into a partition.  Beam search
explores alternative eligible antecedents per mention; its per-decision
scores are log pair-probabilities (and log(1 - best) for "new chain"), so
width 1 reproduces the greedy rule exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attention import AttentionScores, similarity
from .corpus import ChainSet, Document
from .errors import InvalidConfig, OrderViolation, SameMention, ShapeMismatch

#: Feature layout consumed by the decoder, in order.
PAIR_FEATURES = (
    "a_ij",                 # attention of anaphor toward antecedent
    "a_ji",                 # attention of antecedent toward anaphor
    "same_deprel",          # head tokens share their dependency relation
    "depth_diff",           # |tree depth difference| / 8
    "sentence_distance",    # sentence gap / 16
    "mention_distance",     # mention-order gap / 32
    "cosine",               # cosine of the two mention representations
)


@dataclass
class DecoderParams:
    weight: np.ndarray      # len(PAIR_FEATURES)
    bias: float

    @staticmethod
    def zeros() -> "DecoderParams":
        return DecoderParams(weight=np.zeros(len(PAIR_FEATURES)), bias=0.0)

    def validate(self) -> None:
        if self.weight.shape != (len(PAIR_FEATURES),):
            raise ShapeMismatch(
                f"decoder weight shape {self.weight.shape}, "
                f"want ({len(PAIR_FEATURES)},)"
            )


@dataclass(frozen=True)
class ResolutionConfig:
    threshold: float = 0.5
    strategy: str = "greedy"          # greedy | beam
    beam_width: int = 5

    def validate(self) -> None:
        if not (0.0 < self.threshold < 1.0):
            raise InvalidConfig(f"threshold must be in (0,1), got {self.threshold}")
        if self.strategy not in ("greedy", "beam"):
            raise InvalidConfig(f"unknown strategy {self.strategy!r}")
        if self.beam_width < 1:
            raise InvalidConfig(f"beam_width must be >= 1, got {self.beam_width}")


@dataclass
class MentionContext:
    """Per-mention evidence, in document order, backing the pair features."""

    mention_ids: list               # document-order position -> mention id
    sentence_index: np.ndarray
    depth: np.ndarray
    deprel: list
    reprs: np.ndarray               # n x d mention representations


def pair_features(ctx: MentionContext, i: int, j: int,
                  A: AttentionScores) -> np.ndarray:
    """Feature vector for anaphor i / antecedent j (document-order indices)."""
    cos = similarity(ctx.reprs[i], ctx.reprs[j], "cosine")
    return np.array([
        A.a[i, j],
        A.a[j, i],
        1.0 if ctx.deprel[i] == ctx.deprel[j] else 0.0,
        abs(float(ctx.depth[i]) - float(ctx.depth[j])) / 8.0,
        (float(ctx.sentence_index[i]) - float(ctx.sentence_index[j])) / 16.0,
        (i - j) / 32.0,
        cos,
    ])


def logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def pair_score(i: int, j: int, A: AttentionScores, feats: np.ndarray,
               params: DecoderParams) -> float:
    """Probability in (0,1) that mention i corefers with antecedent j."""
    if i == j:
        raise SameMention(f"mention {i} paired with itself")
    if j > i:
        raise OrderViolation(f"antecedent {j} does not precede mention {i}")
    params.validate()
    if feats.shape != params.weight.shape:
        raise ShapeMismatch(f"feature shape {feats.shape}")
    return logistic(float(params.weight @ feats) + params.bias)


def score_matrix(ctx: MentionContext, A: AttentionScores,
                 params: DecoderParams) -> np.ndarray:
    """Lower-triangular matrix S[i, j] = pair_score(i, j) for j < i."""
    n = len(ctx.mention_ids)
    S = np.zeros((n, n))
    for i in range(n):
        for j in range(i):
            S[i, j] = pair_score(i, j, A, pair_features(ctx, i, j, A), params)
    return S


# --- chain assembly ---------------------------------------------------------

class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x, y):
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            self.parent[max(rx, ry)] = min(rx, ry)


def _chains_from_antecedents(doc: Document, antecedents) -> ChainSet:
    order = doc.mentions_in_order()
    uf = _UnionFind(len(order))
    for i, j in enumerate(antecedents):
        if j is not None:
            uf.union(i, j)
    groups = {}
    for i in range(len(order)):
        groups.setdefault(uf.find(i), []).append(order[i].id)
    return ChainSet.from_lists(groups.values())


def greedy_antecedents(S: np.ndarray, threshold: float) -> list:
    """Best-antecedent rule; ties break toward the nearest candidate."""
    n = S.shape[0]
    out = [None] * n
    for i in range(n):
        best_j, best_p = None, -1.0
        for j in range(i - 1, -1, -1):       # nearest first, ties keep it
            if S[i, j] > best_p:
                best_j, best_p = j, S[i, j]
        if best_j is not None and best_p >= threshold:
            out[i] = best_j
    return out


def hypothesis_score(S: np.ndarray, antecedents, threshold: float) -> float:
    """Sum of log pair-scores of links, log(1 - best candidate) for new chains."""
    total = 0.0
    for i, j in enumerate(antecedents):
        if j is not None:
            total += math.log(S[i, j])
        else:
            best = max((S[i, k] for k in range(i)), default=0.0)
            total += math.log(1.0 - best)
    return total


def _actions(S: np.ndarray, i: int, threshold: float) -> list:
    """Eligible decisions for mention i as (antecedent-or-None, log score),
    ranked best first (ties toward the nearest antecedent)."""
    best = max((S[i, k] for k in range(i)), default=0.0)
    if best < threshold:
        return [(None, math.log(1.0 - best))]
    links = [(j, math.log(S[i, j])) for j in range(i) if S[i, j] >= threshold]
    links.sort(key=lambda a: (-a[1], -a[0]))
    return links


def resolve_greedy(doc: Document, S: np.ndarray,
                   cfg: ResolutionConfig) -> ChainSet:
    """Link each mention to its best antecedent when that clears the
    threshold, then close links transitively into a partition."""
    cfg.validate()
    return _chains_from_antecedents(doc, greedy_antecedents(S, cfg.threshold))


def resolve_beam(doc: Document, S: np.ndarray,
                 cfg: ResolutionConfig) -> ChainSet:
    chains, _ = resolve_beam_with_score(doc, S, cfg)
    return chains


def resolve_beam_with_score(doc: Document, S: np.ndarray,
                            cfg: ResolutionConfig):
    """Beam over per-mention antecedent decisions in document order.

    Returns the partition of the best completed hypothesis and its score.
    """
    cfg.validate()
    n = S.shape[0]
    beam = [((), 0.0)]
    for i in range(n):
        expanded = []
        for decisions, score in beam:
            for j, s in _actions(S, i, cfg.threshold):
                expanded.append((decisions + (j,), score + s))
        expanded.sort(key=lambda h: -h[1])    # stable: earlier-ranked ties win
        beam = expanded[: cfg.beam_width]
    best_decisions, best_score = beam[0]
    return _chains_from_antecedents(doc, list(best_decisions)), best_score


def resolve(doc: Document, S: np.ndarray, cfg: ResolutionConfig) -> ChainSet:
    if cfg.strategy == "beam":
        return resolve_beam(doc, S, cfg)
    return resolve_greedy(doc, S, cfg)
