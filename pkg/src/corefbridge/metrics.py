"""Coreference scoring: MUC, B-cubed, entity CEAF, their CoNLL mean, and
average precision over ranked pair predictions.

All partition metrics require gold and predicted chains over the same
mention universe (singletons as size-1 chains).  CEAF's optimal one-to-one
chain alignment runs through two routes: an exact subset-DP search for up to
12 chains and the Hungarian algorithm beyond; both maximize the same phi4
objective and are cross-checked in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .corpus import ChainSet
from .errors import NoPositives, UniverseMismatch

#: Largest chain count handled by the exact assignment search.
EXACT_ALIGNMENT_LIMIT = 12


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @staticmethod
    def from_pr(precision: float, recall: float) -> "PRF":
        if precision + recall > 0:
            f1 = 2.0 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        return PRF(precision=precision, recall=recall, f1=f1)


def _chains(cs) -> list:
    if isinstance(cs, ChainSet):
        return [frozenset(c) for c in cs.chains]
    return [frozenset(c) for c in cs]


def _check_universe(gold, pred):
    gu = frozenset(m for c in gold for m in c)
    pu = frozenset(m for c in pred for m in c)
    if gu != pu:
        raise UniverseMismatch(
            f"gold universe ({len(gu)} mentions) != predicted ({len(pu)})"
        )
    return gu


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def muc(gold, pred) -> PRF:
    """Link-based metric (Vilain et al.): recall counts, per gold chain, the
    links retained after partitioning it by the predicted chains."""
    gold, pred = _chains(gold), _chains(pred)
    _check_universe(gold, pred)

    def side(a_chains, b_chains):
        owner = {m: k for k, c in enumerate(b_chains) for m in c}
        num = den = 0
        for c in a_chains:
            parts = {owner[m] for m in c}
            num += len(c) - len(parts)
            den += len(c) - 1
        return num, den

    r_num, r_den = side(gold, pred)
    p_num, p_den = side(pred, gold)
    return PRF.from_pr(_ratio(p_num, p_den), _ratio(r_num, r_den))


def b_cubed(gold, pred) -> PRF:
    """Mention-based metric: per-mention chain-overlap ratios, averaged."""
    gold, pred = _chains(gold), _chains(pred)
    universe = _check_universe(gold, pred)
    gold_of = {m: c for c in gold for m in c}
    pred_of = {m: c for c in pred for m in c}
    p_sum = r_sum = 0.0
    for m in universe:
        overlap = len(gold_of[m] & pred_of[m])
        p_sum += overlap / len(pred_of[m])
        r_sum += overlap / len(gold_of[m])
    n = len(universe)
    return PRF.from_pr(_ratio(p_sum, n), _ratio(r_sum, n))


def _phi4(a, b) -> float:
    return 2.0 * len(a & b) / (len(a) + len(b))


def _exact_alignment(phi: np.ndarray) -> float:
    """Max-weight one-to-one assignment by DP over column subsets."""
    rows, cols = phi.shape
    if cols > rows:
        phi = phi.T
        rows, cols = phi.shape
    full = 1 << cols
    masks = np.arange(full)
    dp = np.zeros(full)
    for r in range(rows):
        nxt = dp.copy()                    # row r may stay unassigned
        for b in range(cols):
            bit = 1 << b
            with_b = masks[(masks & bit) != 0]
            cand = dp[with_b ^ bit] + phi[r, b]
            nxt[with_b] = np.maximum(nxt[with_b], cand)
        dp = nxt
    return float(dp.max())


def _hungarian_alignment(phi: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(-phi)
    return float(phi[rows, cols].sum())


def ceaf_e(gold, pred) -> PRF:
    """Entity-based CEAF with phi4 similarity at the optimal chain alignment."""
    gold, pred = _chains(gold), _chains(pred)
    _check_universe(gold, pred)
    if not gold or not pred:
        return PRF.from_pr(0.0, 0.0)
    phi = np.array([[_phi4(g, p) for p in pred] for g in gold])
    if max(len(gold), len(pred)) <= EXACT_ALIGNMENT_LIMIT:
        total = _exact_alignment(phi)
    else:
        total = _hungarian_alignment(phi)
    return PRF.from_pr(total / len(pred), total / len(gold))


def conll_f1(gold, pred) -> float:
    """Unweighted mean of the MUC, B-cubed and CEAF-e F1 scores."""
    return (muc(gold, pred).f1 + b_cubed(gold, pred).f1
            + ceaf_e(gold, pred).f1) / 3.0


def corpus_prf(doc_pairs) -> dict:
    """Aggregate scores over (gold, pred) ChainSet pairs from many documents.

    Mention ids are namespaced per document and the chains merged into one
    universe, which reproduces the usual micro-averaged corpus scores (B-cubed
    mention sums, MUC link sums, CEAF alignments never cross documents since
    cross-document chain overlaps are empty).
    """
    gold_all, pred_all = [], []
    for k, (gold, pred) in enumerate(doc_pairs):
        gold_all.extend(frozenset((k, m) for m in c) for c in _chains(gold))
        pred_all.extend(frozenset((k, m) for m in c) for c in _chains(pred))
    m = muc(gold_all, pred_all)
    b = b_cubed(gold_all, pred_all)
    c = ceaf_e(gold_all, pred_all)
    return {
        "muc": m,
        "b3": b,
        "ceaf_e": c,
        "conll_f1": (m.f1 + b.f1 + c.f1) / 3.0,
    }


def average_precision(scores, labels) -> float:
    """AP over pairs ranked by score; ties keep their original order."""
    if len(scores) != len(labels):
        raise UniverseMismatch(
            f"{len(scores)} scores for {len(labels)} labels"
        )
    n_pos = sum(1 for y in labels if y)
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive pair")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if labels[idx]:
            hits += 1
            total += hits / rank
    return total / n_pos
