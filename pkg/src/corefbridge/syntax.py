"""Per-token syntactic features and the additive embedding enhancement.

Features are read straight off the dependency trees (depth, relation,
head POS, path-to-root bag, child counts), vectorized against label/POS
inventories frozen at training time, and mapped into embedding space by a
learned affine projection that is simply added to the contextual rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import ROOT, Document
from .embeddings import EmbeddingMatrix
from .errors import ShapeMismatch

#: Path-to-root bags keep at most this many labels (nearest the token).
MAX_PATH_DEPTH = 8


@dataclass(frozen=True)
class Inventories:
    deprel: tuple
    upos: tuple

    @staticmethod
    def from_documents(docs) -> "Inventories":
        deprels, upos = set(), set()
        for doc in docs:
            for sent in doc.sentences:
                for t in sent:
                    deprels.add(t.deprel)
                    upos.add(t.upos)
        return Inventories(deprel=tuple(sorted(deprels)),
                           upos=tuple(sorted(upos)))

    def feature_dim(self) -> int:
        # depth + deprel onehot + head-upos onehot + path bag + child counts
        return 1 + 2 * len(self.deprel) + len(self.upos) + 2


@dataclass(eq=False)
class SyntaxFeatures:
    depth: int
    deprel_onehot: np.ndarray
    head_upos_onehot: np.ndarray
    path_bag: np.ndarray         # counts over the deprel inventory
    child_counts: tuple          # (left, right)


@dataclass
class SyntaxProjection:
    weight: np.ndarray           # feature_dim x d
    bias: np.ndarray             # d

    @staticmethod
    def zeros(feature_dim: int, d: int) -> "SyntaxProjection":
        return SyntaxProjection(weight=np.zeros((feature_dim, d)),
                                bias=np.zeros(d))


def _onehot(label: str, inventory: tuple) -> np.ndarray:
    vec = np.zeros(len(inventory), dtype=np.float64)
    try:
        vec[inventory.index(label)] = 1.0
    except ValueError:
        pass                     # out-of-inventory labels stay all-zero
    return vec


def extract_features(doc: Document, inventories: Inventories) -> list:
    """One SyntaxFeatures per token, in flat (sentence-major) order."""
    out = []
    for sent in doc.sentences:
        depths = [None] * len(sent)

        def depth_of(i):
            if depths[i] is None:
                depths[i] = 0 if sent[i].head == ROOT else depth_of(sent[i].head) + 1
            return depths[i]

        left = [0] * len(sent)
        right = [0] * len(sent)
        for t in sent:
            if t.head != ROOT:
                if t.index < t.head:
                    left[t.head] += 1
                else:
                    right[t.head] += 1
        for t in sent:
            path = []
            cur = t
            while cur.head != ROOT and len(path) < MAX_PATH_DEPTH:
                path.append(cur.deprel)
                cur = sent[cur.head]
            bag = np.zeros(len(inventories.deprel), dtype=np.float64)
            for label in path:
                try:
                    bag[inventories.deprel.index(label)] += 1.0
                except ValueError:
                    pass
            head_upos = (np.zeros(len(inventories.upos))
                         if t.head == ROOT
                         else _onehot(sent[t.head].upos, inventories.upos))
            out.append(SyntaxFeatures(
                depth=depth_of(t.index),
                deprel_onehot=_onehot(t.deprel, inventories.deprel),
                head_upos_onehot=head_upos,
                path_bag=bag,
                child_counts=(left[t.index], right[t.index]),
            ))
    return out


def vectorize(feats: SyntaxFeatures) -> np.ndarray:
    """Fixed-layout feature vector with all components scaled to O(1)."""
    return np.concatenate([
        [feats.depth / 8.0],
        feats.deprel_onehot,
        feats.head_upos_onehot,
        feats.path_bag / 8.0,
        [feats.child_counts[0] / 4.0, feats.child_counts[1] / 4.0],
    ])


def token_depths(doc: Document) -> np.ndarray:
    """Distance to the sentence root for every token, in flat order."""
    out = []
    for sent in doc.sentences:
        depths = [None] * len(sent)

        def depth_of(i):
            if depths[i] is None:
                depths[i] = 0 if sent[i].head == ROOT else depth_of(sent[i].head) + 1
            return depths[i]

        out.extend(depth_of(i) for i in range(len(sent)))
    return np.array(out, dtype=np.float64)


def feature_matrix(doc: Document, inventories: Inventories) -> np.ndarray:
    """n_tokens x feature_dim matrix of vectorized syntax features."""
    feats = extract_features(doc, inventories)
    if not feats:
        return np.zeros((0, inventories.feature_dim()))
    return np.stack([vectorize(f) for f in feats])


def enhance(E: EmbeddingMatrix, feats: list, proj: SyntaxProjection) -> EmbeddingMatrix:
    """Additive refinement: row i becomes E_i + weight^T.phi_i + bias."""
    if len(feats) != E.rows:
        raise ShapeMismatch(f"{len(feats)} feature rows for {E.rows} embeddings")
    phi = (np.stack([vectorize(f) for f in feats])
           if feats else np.zeros((0, proj.weight.shape[0])))
    if phi.shape[1] != proj.weight.shape[0] or proj.weight.shape[1] != E.dim:
        raise ShapeMismatch(
            f"projection {proj.weight.shape} incompatible with features "
            f"{phi.shape} and dim {E.dim}"
        )
    return EmbeddingMatrix(E.data + phi @ proj.weight + proj.bias)
