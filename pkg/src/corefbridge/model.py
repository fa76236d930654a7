"""The assembled scoring pipeline and its parameter container.

A model bundles the syntax projection, attention parameters and decoder
weights together with everything needed to reproduce its inputs
(inventories, embedding provider, representation choices).  Five ablation
arms switch pipeline stages on and off:

    base       contextual embeddings only, decoder trained
    syntax     adds the additive tree-feature enhancement
    semantics  adds the role-embedding path
    attention  adds the configured attention mechanism over embeddings
    full       all three enhancements together

The forward pass caches every intermediate so ``backward_document`` can
hand-propagate gradients through the decoder, the candidate softmax, the
attention stage and the syntax projection; correctness is pinned by central
finite differences in the test suite.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attention import (
    AttentionParams,
    AttentionScores,
    cross_attention_with_cache,
    init_attention_params,
    pairwise_scores,
    similarity_matrix,
)
from .corpus import ChainSet, Document
from .embeddings import EmbeddingMatrix, ProviderConfig, embed_document, role_matrix
from .errors import InvalidConfig, ShapeMismatch, VersionMismatch
from .hashing import mix
from .resolver import (
    PAIR_FEATURES,
    DecoderParams,
    MentionContext,
    ResolutionConfig,
    resolve,
)
from .syntax import Inventories, SyntaxProjection, feature_matrix, token_depths

WEIGHTS_MAGIC = b"CRBWGT01"
FORMAT_VERSION = 1

ARMS = ("base", "syntax", "semantics", "attention", "full")


@dataclass(frozen=True)
class ArmSpec:
    syntax: bool
    semantics: bool
    attention: bool


ARM_SPECS = {
    "base": ArmSpec(False, False, False),
    "syntax": ArmSpec(True, False, False),
    "semantics": ArmSpec(False, True, False),
    "attention": ArmSpec(False, False, True),
    "full": ArmSpec(True, True, True),
}


@dataclass
class ModelParams:
    version: int
    arm: str
    d: int
    feature_dim: int
    inventories: Inventories
    syntax: SyntaxProjection
    attention: AttentionParams
    decoder: DecoderParams
    provider: ProviderConfig
    pairwise_kind: str = "cosine"
    mention_repr: str = "head"        # head | span_mean
    seed: int = 0


def init_model(inventories: Inventories, arm: str, provider: ProviderConfig,
               mechanism: str = "cross", n_heads: int = 1, d_k: int = 0,
               pairwise_kind: str = "cosine", mention_repr: str = "head",
               seed: int = 0) -> ModelParams:
    """Fresh model: zero syntax/decoder, seeded attention projections."""
    if arm not in ARM_SPECS:
        raise InvalidConfig(f"unknown arm {arm!r}")
    if mention_repr not in ("head", "span_mean"):
        raise InvalidConfig(f"unknown mention_repr {mention_repr!r}")
    d = provider.dim
    feature_dim = inventories.feature_dim()
    return ModelParams(
        version=FORMAT_VERSION,
        arm=arm,
        d=d,
        feature_dim=feature_dim,
        inventories=inventories,
        syntax=SyntaxProjection.zeros(feature_dim, d),
        attention=init_attention_params(mechanism, d, d_k=d_k,
                                        n_heads=n_heads, seed=mix(seed, 1)),
        decoder=DecoderParams.zeros(),
        provider=provider,
        pairwise_kind=pairwise_kind,
        mention_repr=mention_repr,
        seed=seed,
    )


# --- canonical parameter flattening -----------------------------------------

def param_layout(params: ModelParams) -> list:
    """(name, shape) entries in the fixed flattening order."""
    entries = [
        ("syntax.weight", (params.feature_dim, params.d)),
        ("syntax.bias", (params.d,)),
    ]
    att = params.attention
    if att.mechanism != "vanilla":
        for h in range(att.n_heads):
            entries.append((f"attention.h{h}.w_q", (params.d, att.d_k)))
            entries.append((f"attention.h{h}.w_k", (params.d, att.d_k)))
            entries.append((f"attention.h{h}.w_v", (params.d, att.d_k)))
        entries.append(("attention.w_o", (att.n_heads * att.d_k, params.d)))
    entries.append(("decoder.weight", (len(PAIR_FEATURES),)))
    entries.append(("decoder.bias", (1,)))
    return entries


def _param_arrays(params: ModelParams) -> list:
    arrays = [params.syntax.weight, params.syntax.bias]
    att = params.attention
    if att.mechanism != "vanilla":
        for h in range(att.n_heads):
            arrays.extend([att.w_q[h], att.w_k[h], att.w_v[h]])
        arrays.append(att.w_o)
    arrays.extend([params.decoder.weight, np.array([params.decoder.bias])])
    return arrays


def n_parameters(params: ModelParams) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(params))


def flatten_params(params: ModelParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in _param_arrays(params)])


def set_params_from_flat(params: ModelParams, flat: np.ndarray) -> None:
    layout = param_layout(params)
    total = sum(int(np.prod(s)) for _, s in layout)
    if flat.shape != (total,):
        raise ShapeMismatch(f"flat vector {flat.shape}, expected ({total},)")
    pos = 0
    values = {}
    for name, shape in layout:
        size = int(np.prod(shape))
        values[name] = flat[pos: pos + size].reshape(shape).copy()
        pos += size
    params.syntax.weight = values["syntax.weight"]
    params.syntax.bias = values["syntax.bias"]
    att = params.attention
    if att.mechanism != "vanilla":
        for h in range(att.n_heads):
            att.w_q[h] = values[f"attention.h{h}.w_q"]
            att.w_k[h] = values[f"attention.h{h}.w_k"]
            att.w_v[h] = values[f"attention.h{h}.w_v"]
        att.w_o = values["attention.w_o"]
    params.decoder.weight = values["decoder.weight"]
    params.decoder.bias = float(values["decoder.bias"][0])


def trainable_mask(params: ModelParams, arm: str) -> np.ndarray:
    """1.0 for slots the given arm trains, 0.0 elsewhere."""
    spec = ARM_SPECS[arm]
    chunks = []
    for name, shape in param_layout(params):
        size = int(np.prod(shape))
        if name.startswith("syntax."):
            on = spec.syntax
        elif name.startswith("attention."):
            on = spec.attention and params.attention.mechanism != "vanilla"
        else:
            on = True                      # decoder always trains
        chunks.append(np.full(size, 1.0 if on else 0.0))
    return np.concatenate(chunks)


def bias_mask(params: ModelParams) -> np.ndarray:
    """1.0 for bias slots (excluded from weight decay)."""
    chunks = []
    for name, shape in param_layout(params):
        size = int(np.prod(shape))
        is_bias = name.endswith(".bias")
        chunks.append(np.full(size, 1.0 if is_bias else 0.0))
    return np.concatenate(chunks)


# --- per-document precomputation ---------------------------------------------

@dataclass
class DocFeatures:
    """Frozen per-document inputs: embeddings, tree features, role vectors,
    mention bookkeeping and static pair evidence."""

    doc: Document
    E: np.ndarray
    phi: np.ndarray
    roles: np.ndarray
    sentence_ids: np.ndarray
    mention_ids: list
    span_rows: list                   # flat token rows per mention span
    head_rows: np.ndarray
    m_sent: np.ndarray
    m_depth: np.ndarray
    m_deprel: list
    static: np.ndarray                # n_m x n_m x 4, defined for j < i
    labels: Optional[np.ndarray]      # gold same-chain indicator, j < i

    @property
    def n_mentions(self) -> int:
        return len(self.mention_ids)


def build_doc_features(doc: Document, params: ModelParams,
                       E: Optional[EmbeddingMatrix] = None) -> DocFeatures:
    if E is None:
        E = embed_document(params.provider, doc)
    E.validate(expected_rows=doc.n_tokens)
    phi = feature_matrix(doc, params.inventories)
    roles = role_matrix(doc, params.d, params.provider.seed)
    offsets = doc.sentence_offsets()
    sentence_ids = np.concatenate([
        np.full(len(s), k, dtype=np.int64) for k, s in enumerate(doc.sentences)
    ]) if doc.sentences else np.zeros(0, dtype=np.int64)
    depths = token_depths(doc)

    order = doc.mentions_in_order()
    mention_ids = [m.id for m in order]
    head_rows = np.array(
        [offsets[m.sentence_index] + m.head_token for m in order], dtype=np.int64
    )
    span_rows = [
        list(range(offsets[m.sentence_index] + m.start,
                   offsets[m.sentence_index] + m.end + 1))
        for m in order
    ]
    m_sent = np.array([m.sentence_index for m in order], dtype=np.int64)
    m_depth = np.array([depths[r] for r in head_rows], dtype=np.float64)
    m_deprel = [
        doc.sentences[m.sentence_index][m.head_token].deprel for m in order
    ]

    n_m = len(order)
    static = np.zeros((n_m, n_m, 4))
    for i in range(n_m):
        for j in range(i):
            static[i, j, 0] = 1.0 if m_deprel[i] == m_deprel[j] else 0.0
            static[i, j, 1] = abs(m_depth[i] - m_depth[j]) / 8.0
            static[i, j, 2] = (m_sent[i] - m_sent[j]) / 16.0
            static[i, j, 3] = (i - j) / 32.0
    labels = None
    if doc.gold_chains is not None:
        chain_of = doc.gold_chains.chain_of()
        labels = np.zeros((n_m, n_m))
        for i in range(n_m):
            for j in range(i):
                same = chain_of.get(mention_ids[i]) == chain_of.get(mention_ids[j])
                labels[i, j] = 1.0 if same else 0.0
    return DocFeatures(
        doc=doc, E=E.data, phi=phi, roles=roles, sentence_ids=sentence_ids,
        mention_ids=mention_ids, span_rows=span_rows, head_rows=head_rows,
        m_sent=m_sent, m_depth=m_depth, m_deprel=m_deprel, static=static,
        labels=labels,
    )


# --- forward -----------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward_document(feats: DocFeatures, params: ModelParams,
                     dropout_mask: Optional[np.ndarray] = None,
                     dtype=np.float64) -> dict:
    """Run the pipeline for one document; returns a cache holding the pair
    probabilities (lower-triangular matrix) and all intermediates.

    ``dtype`` widens the arithmetic (the finite-difference checker evaluates
    in extended precision); normal use stays on float64.
    """
    spec = ARM_SPECS[params.arm]
    E = feats.E.astype(dtype, copy=True)
    roles = feats.roles.astype(dtype, copy=False)
    X0 = E
    S = None
    if spec.syntax:
        S = (feats.phi.astype(dtype, copy=False) @
             params.syntax.weight.astype(dtype, copy=False)
             + params.syntax.bias.astype(dtype, copy=False))
        X0 = X0 + S
    if spec.semantics:
        X0 = X0 + roles
    Xd = X0 * dropout_mask.astype(dtype, copy=False) \
        if dropout_mask is not None else X0

    attn_cache = None
    keys_src = values_src = None
    if spec.attention:
        if params.attention.mechanism == "self_attn":
            keys_src = values_src = "X"
            keys = values = Xd
        else:
            keys_src = "S" if spec.syntax else "X"
            values_src = "R" if spec.semantics else "X"
            keys = S if keys_src == "S" else Xd
            values = roles if values_src == "R" else Xd
        O, attn_cache = cross_attention_with_cache(
            Xd, keys, values, params.attention, feats.sentence_ids
        )
        Xf = Xd + O
    else:
        Xf = Xd

    n_m = feats.n_mentions
    if params.mention_repr == "span_mean":
        reprs = np.stack([Xf[rows].mean(axis=0) for rows in feats.span_rows]) \
            if n_m else np.zeros((0, params.d), dtype=dtype)
    else:
        reprs = Xf[feats.head_rows] if n_m else np.zeros((0, params.d), dtype=dtype)

    A = pairwise_scores(reprs, params.pairwise_kind)
    cos = similarity_matrix(reprs, "cosine") if n_m else np.zeros((0, 0), dtype=dtype)

    tril = np.tril(np.ones((n_m, n_m), dtype=dtype), k=-1)
    w = params.decoder.weight
    z = (w[0] * A.a + w[1] * A.a.T
         + w[2] * feats.static[:, :, 0] + w[3] * feats.static[:, :, 1]
         + w[4] * feats.static[:, :, 2] + w[5] * feats.static[:, :, 3]
         + w[6] * cos + params.decoder.bias) * tril
    probs = _sigmoid(z) * tril

    return {
        "feats": feats, "X0": X0, "S": S, "Xd": Xd, "Xf": Xf,
        "dropout_mask": dropout_mask, "attn_cache": attn_cache,
        "keys_src": keys_src, "values_src": values_src,
        "reprs": reprs, "A": A, "cos": cos, "tril": tril,
        "z": z, "probs": probs,
    }


def pair_prob_list(cache: dict):
    """(probs, labels) pooled in the canonical (i, then j<i) order."""
    feats = cache["feats"]
    n_m = feats.n_mentions
    probs, labels = [], []
    for i in range(n_m):
        for j in range(i):
            probs.append(float(cache["probs"][i, j]))
            labels.append(bool(feats.labels[i, j]) if feats.labels is not None
                          else None)
    return probs, labels


# --- backward ----------------------------------------------------------------

def _softmax_rows_backward(P: np.ndarray, g_P: np.ndarray) -> np.ndarray:
    dot = (g_P * P).sum(axis=1, keepdims=True)
    return P * (g_P - dot)


def _pairwise_scores_backward(cache: dict, g_A: np.ndarray,
                              kind: str) -> np.ndarray:
    """Gradient of the masked-softmax candidate scores wrt mention reprs."""
    A = cache["A"].a
    reprs = cache["reprs"]
    n = reprs.shape[0]
    if n < 2:
        return np.zeros_like(reprs)
    g_sims = _softmax_rows_backward(A, g_A)
    np.fill_diagonal(g_sims, 0.0)
    return _similarity_matrix_backward(reprs, g_sims, kind)


def _similarity_matrix_backward(reprs: np.ndarray, g_sims: np.ndarray,
                                kind: str) -> np.ndarray:
    if kind == "scaled_dot":
        scale = math.sqrt(reprs.shape[1])
        return (g_sims @ reprs + g_sims.T @ reprs) / scale
    if kind == "cosine":
        norms = np.linalg.norm(reprs, axis=1)
        safe = np.where(norms == 0.0, 1.0, norms)
        U = reprs / safe[:, None]
        C = U @ U.T
        M = g_sims + g_sims.T
        g = (M @ U - (M * C).sum(axis=1, keepdims=True) * U) / safe[:, None]
        g[norms == 0.0] = 0.0
        return g
    raise InvalidConfig(f"unknown similarity kind {kind!r}")


def _attention_backward(g_O: np.ndarray, attn_cache: dict,
                        params: AttentionParams):
    """Returns (g_Ex, g_ES, g_ER, grads_by_name)."""
    att = params
    E_x, E_S, E_R = attn_cache["E_x"], attn_cache["E_S"], attn_cache["E_R"]
    grads = {}

    if att.mechanism == "vanilla":
        head = attn_cache["heads"][0]
        P, V = head["P"], head["V"]
        scale = math.sqrt(E_x.shape[1])
        g_P = g_O @ V.T
        g_V = P.T @ g_O
        g_Z = _softmax_rows_backward(P, g_P)
        g_Q = g_Z @ E_S / scale
        g_K = g_Z.T @ E_x / scale
        return g_Q, g_K, g_V, grads

    H = attn_cache["H"]
    g_H = g_O @ att.w_o.T
    grads["attention.w_o"] = H.T @ g_O
    g_Ex = np.zeros_like(E_x)
    g_ES = np.zeros_like(E_S)
    g_ER = np.zeros_like(E_R)
    scale = math.sqrt(att.d_k)

    if att.mechanism == "hierarchical":
        head = attn_cache["heads"][0]
        Q, K, V = head["Q"], head["K"], head["V"]
        groups, P2, U, H1 = head["groups"], head["P2"], head["U"], head["H1"]
        g_H1 = g_H.copy()
        g_H2 = g_H
        g_P2 = g_H2 @ U.T
        g_U = P2.T @ g_H2
        g_Z2 = _softmax_rows_backward(P2, g_P2)
        g_Q = g_Z2 @ U / scale
        g_U += g_Z2.T @ Q / scale
        for s, idx in enumerate(groups):
            g_H1[idx] += g_U[s] / len(idx)
        g_K = np.zeros_like(K)
        g_V = np.zeros_like(V)
        for stage, idx in zip(head["stage1"], groups):
            P1 = stage["P"]
            g_P1 = g_H1[idx] @ V[idx].T
            g_V[idx] += P1.T @ g_H1[idx]
            g_Z1 = _softmax_rows_backward(P1, g_P1)
            g_Q[idx] += g_Z1 @ K[idx] / scale
            g_K[idx] += g_Z1.T @ Q[idx] / scale
        grads["attention.h0.w_q"] = E_x.T @ g_Q
        grads["attention.h0.w_k"] = E_S.T @ g_K
        grads["attention.h0.w_v"] = E_R.T @ g_V
        g_Ex += g_Q @ att.w_q[0].T
        g_ES += g_K @ att.w_k[0].T
        g_ER += g_V @ att.w_v[0].T
        return g_Ex, g_ES, g_ER, grads

    for h, head in enumerate(attn_cache["heads"]):
        P, Q, K, V = head["P"], head["Q"], head["K"], head["V"]
        g_Hh = g_H[:, h * att.d_k:(h + 1) * att.d_k]
        g_P = g_Hh @ V.T
        g_V = P.T @ g_Hh
        g_Z = _softmax_rows_backward(P, g_P)
        g_Q = g_Z @ K / scale
        g_K = g_Z.T @ Q / scale
        grads[f"attention.h{h}.w_q"] = E_x.T @ g_Q
        grads[f"attention.h{h}.w_k"] = E_S.T @ g_K
        grads[f"attention.h{h}.w_v"] = E_R.T @ g_V
        g_Ex += g_Q @ att.w_q[h].T
        g_ES += g_K @ att.w_k[h].T
        g_ER += g_V @ att.w_v[h].T
    return g_Ex, g_ES, g_ER, grads


def backward_document(cache: dict, params: ModelParams,
                      g_z: np.ndarray) -> dict:
    """Gradients of a loss wrt all parameters, given dL/dz for each pair
    logit (lower-triangular matrix aligned with the forward's ``z``)."""
    feats = cache["feats"]
    spec = ARM_SPECS[params.arm]
    n_m = feats.n_mentions
    w = params.decoder.weight
    A = cache["A"].a
    cos = cache["cos"]
    grads = {}

    g_z = g_z * cache["tril"]
    grads["decoder.weight"] = np.array([
        float((g_z * A).sum()),
        float((g_z * A.T).sum()),
        float((g_z * feats.static[:, :, 0]).sum()),
        float((g_z * feats.static[:, :, 1]).sum()),
        float((g_z * feats.static[:, :, 2]).sum()),
        float((g_z * feats.static[:, :, 3]).sum()),
        float((g_z * cos).sum()),
    ])
    grads["decoder.bias"] = np.array([float(g_z.sum())])

    # dL/dA and dL/dcos, then back through the two similarity paths
    g_A = w[0] * g_z + w[1] * g_z.T
    g_cos = w[6] * g_z
    g_reprs = _pairwise_scores_backward(cache, g_A, params.pairwise_kind)
    if n_m >= 2:
        g_reprs += _similarity_matrix_backward(cache["reprs"], g_cos, "cosine")

    g_Xf = np.zeros_like(cache["Xf"])
    if params.mention_repr == "span_mean":
        for m, rows in enumerate(feats.span_rows):
            g_Xf[rows] += g_reprs[m] / len(rows)
    else:
        np.add.at(g_Xf, feats.head_rows, g_reprs)

    if spec.attention:
        g_Xd = g_Xf.copy()
        g_Ex, g_ES, g_ER, attn_grads = _attention_backward(
            g_Xf, cache["attn_cache"], params.attention
        )
        grads.update(attn_grads)
        g_Xd += g_Ex
        if cache["keys_src"] == "X":
            g_Xd += g_ES
        if cache["values_src"] == "X":
            g_Xd += g_ER
    else:
        g_Xd = g_Xf
        g_ES = None

    g_X0 = (g_Xd * cache["dropout_mask"]
            if cache["dropout_mask"] is not None else g_Xd)

    if spec.syntax:
        g_S = g_X0.copy()
        if spec.attention and cache["keys_src"] == "S":
            g_S += g_ES
        grads["syntax.weight"] = feats.phi.T @ g_S
        grads["syntax.bias"] = g_S.sum(axis=0)
    else:
        grads["syntax.weight"] = np.zeros_like(params.syntax.weight)
        grads["syntax.bias"] = np.zeros_like(params.syntax.bias)
    return grads


def grads_to_flat(params: ModelParams, grads: dict) -> np.ndarray:
    chunks = []
    for name, shape in param_layout(params):
        g = grads.get(name)
        chunks.append(np.zeros(int(np.prod(shape))) if g is None else g.ravel())
    return np.concatenate(chunks)


# --- prediction --------------------------------------------------------------

def score_documents(params: ModelParams, docs,
                    embeddings: Optional[dict] = None):
    """Forward every document (no dropout); yields (doc, feats, cache)."""
    for doc in docs:
        E = embeddings.get(doc.id) if embeddings else None
        feats = build_doc_features(doc, params, E=E)
        yield doc, feats, forward_document(feats, params)


def predict_chains(params: ModelParams, doc: Document, cfg: ResolutionConfig,
                   E: Optional[EmbeddingMatrix] = None) -> ChainSet:
    feats = build_doc_features(doc, params, E=E)
    cache = forward_document(feats, params)
    return resolve(doc, cache["probs"], cfg)


# --- weights file ------------------------------------------------------------

def save_weights(path, params: ModelParams) -> None:
    header = {
        "version": FORMAT_VERSION,
        "arm": params.arm,
        "d": params.d,
        "feature_dim": params.feature_dim,
        "mechanism": params.attention.mechanism,
        "n_heads": params.attention.n_heads,
        "d_k": params.attention.d_k,
        "pairwise_kind": params.pairwise_kind,
        "mention_repr": params.mention_repr,
        "seed": params.seed,
        "inventories": {"deprel": list(params.inventories.deprel),
                        "upos": list(params.inventories.upos)},
        "provider": {
            "kind": params.provider.kind,
            "dim": params.provider.dim,
            "window": params.provider.window,
            "seed": params.provider.seed,
            "endpoint": params.provider.endpoint,
            "timeout_ms": params.provider.timeout_ms,
        },
        "n_params": n_parameters(params),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    flat = flatten_params(params)
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(flat.astype("<f8").tobytes())


def load_weights(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != WEIGHTS_MAGIC:
            raise VersionMismatch(f"bad magic {magic!r} in {path}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise VersionMismatch(
                f"weights format {header.get('version')} unsupported "
                f"(expected {FORMAT_VERSION})"
            )
        payload = fh.read()
    inventories = Inventories(
        deprel=tuple(header["inventories"]["deprel"]),
        upos=tuple(header["inventories"]["upos"]),
    )
    provider = ProviderConfig(**header["provider"])
    params = init_model(
        inventories, header["arm"], provider,
        mechanism=header["mechanism"], n_heads=header["n_heads"],
        d_k=header["d_k"], pairwise_kind=header["pairwise_kind"],
        mention_repr=header["mention_repr"], seed=header["seed"],
    )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if flat.size != header["n_params"]:
        raise VersionMismatch(
            f"payload holds {flat.size} params, header says {header['n_params']}"
        )
    set_params_from_flat(params, flat)
    return params
