"""Optimization of the decoder, syntax projection and attention parameters.

Gradients are hand-derived through the whole pipeline (binary cross-entropy
over antecedent pairs, candidate softmax, cross-attention, syntax
enhancement) and verified against central finite differences.  The loop is
deterministic by construction: batching order, dropout masks and parameter
initialization all derive from the configured seed, so identical runs yield
bit-identical weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    EmptyBatch,
    EmptyCorpus,
    InvalidConfig,
    NonFiniteGradient,
    ShapeMismatch,
)
from .hashing import mix
from .metrics import corpus_prf
from .model import (
    ARM_SPECS,
    DocFeatures,
    ModelParams,
    backward_document,
    bias_mask,
    build_doc_features,
    flatten_params,
    forward_document,
    grads_to_flat,
    init_model,
    n_parameters,
    param_layout,
    set_params_from_flat,
    trainable_mask,
)
from .resolver import ResolutionConfig, resolve

_PROB_CLIP = 1e-12
_GRAD_CHECK_MAX_PARAMS = 10_000


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 5
    lr: float = 2e-5
    warmup: float = 0.1
    clip_norm: float = 1.0
    dropout: float = 0.1
    weight_decay: float = 0.01
    seed: int = 42

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidConfig("batch_size and epochs must be positive")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise InvalidConfig("lr and clip_norm must be positive")
        if not (0.0 <= self.warmup < 1.0):
            raise InvalidConfig(f"warmup must be in [0,1), got {self.warmup}")
        if not (0.0 <= self.dropout < 1.0):
            raise InvalidConfig(f"dropout must be in [0,1), got {self.dropout}")
        if self.weight_decay < 0:
            raise InvalidConfig("weight_decay must be non-negative")


@dataclass
class OptimizerState:
    step: int
    m: np.ndarray
    v: np.ndarray
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    @staticmethod
    def zeros(n_params: int) -> "OptimizerState":
        return OptimizerState(step=0, m=np.zeros(n_params), v=np.zeros(n_params))


def pair_loss(probs, gold) -> float:
    """Mean binary cross-entropy over antecedent-candidate pairs."""
    if len(probs) != len(gold):
        raise ShapeMismatch(f"{len(probs)} probs for {len(gold)} labels")
    if len(probs) == 0:
        raise EmptyBatch("no pairs to score")
    total = 0.0
    for p, y in zip(probs, gold):
        p = min(max(p, _PROB_CLIP), 1.0 - _PROB_CLIP)
        total += -(math.log(p) if y else math.log(1.0 - p))
    return total / len(probs)


def lr_schedule(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warm-up to the configured peak, then linear decay to zero."""
    if total_steps < 1:
        raise InvalidConfig(f"total_steps must be >= 1, got {total_steps}")
    if step >= total_steps:
        return 0.0
    if step < 0:
        return 0.0
    warmup_steps = math.ceil(cfg.warmup * total_steps)
    if warmup_steps > 0 and step <= warmup_steps:
        return cfg.lr * step / warmup_steps
    if warmup_steps >= total_steps:
        return 0.0
    return cfg.lr * (total_steps - step) / (total_steps - warmup_steps)


def clip_gradients(g: np.ndarray, max_norm: float = 1.0) -> np.ndarray:
    if not np.isfinite(g).all():
        raise NonFiniteGradient("gradient contains NaN/Inf")
    norm = float(np.linalg.norm(g))
    if norm <= max_norm:
        return g
    return g * (max_norm / norm)


def adamw_step(theta: np.ndarray, g: np.ndarray, state: OptimizerState,
               lr: float, weight_decay: float,
               decay_mask: Optional[np.ndarray] = None):
    """One decoupled-weight-decay update; returns (new_theta, new_state)."""
    if theta.shape != g.shape or theta.shape != state.m.shape:
        raise ShapeMismatch(
            f"theta {theta.shape}, grad {g.shape}, state {state.m.shape}"
        )
    b1, b2 = state.betas
    t = state.step + 1
    if weight_decay:
        decay = theta if decay_mask is None else theta * decay_mask
        theta = theta - lr * weight_decay * decay
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return theta, OptimizerState(step=t, m=m, v=v, betas=state.betas,
                                 eps=state.eps)


# --- batch loss and gradient --------------------------------------------------

def _count_pairs(feats: DocFeatures) -> int:
    n = feats.n_mentions
    return n * (n - 1) // 2


def batch_backward(batch, params: ModelParams, dropout_masks=None):
    """Pooled BCE loss and flat analytic gradient over a batch of documents.

    ``batch`` holds DocFeatures with gold labels; pair examples from all
    documents are pooled before averaging.
    """
    if not batch:
        raise EmptyBatch("empty batch")
    total_pairs = sum(_count_pairs(f) for f in batch)
    if total_pairs == 0:
        raise EmptyBatch("batch contains no mention pairs")
    if dropout_masks is None:
        dropout_masks = [None] * len(batch)
    loss_sum = 0.0
    flat_grad = np.zeros(n_parameters(params))
    for feats, mask in zip(batch, dropout_masks):
        if feats.labels is None:
            raise EmptyCorpus(f"document {feats.doc.id} lacks gold chains")
        if feats.n_mentions < 2:
            continue
        cache = forward_document(feats, params, dropout_mask=mask)
        tril = cache["tril"]
        probs = np.clip(cache["probs"], _PROB_CLIP, 1.0 - _PROB_CLIP)
        y = feats.labels
        losses = -(y * np.log(probs) + (1.0 - y) * np.log(1.0 - probs)) * tril
        loss_sum += float(losses.sum())
        g_z = (cache["probs"] - y) * tril / total_pairs
        grads = backward_document(cache, params, g_z)
        flat_grad += grads_to_flat(params, grads)
    loss = loss_sum / total_pairs
    if not np.isfinite(loss) or not np.isfinite(flat_grad).all():
        raise NonFiniteGradient("non-finite loss or gradient")
    return loss, flat_grad


def batch_loss(batch, params: ModelParams, dropout_masks=None,
               dtype=np.float64):
    """Loss-only evaluation (used by the finite-difference checker, which
    widens ``dtype`` so the central difference is not roundoff-limited)."""
    total_pairs = sum(_count_pairs(f) for f in batch)
    if total_pairs == 0:
        raise EmptyBatch("batch contains no mention pairs")
    if dropout_masks is None:
        dropout_masks = [None] * len(batch)
    loss_sum = dtype(0.0)
    for feats, mask in zip(batch, dropout_masks):
        if feats.n_mentions < 2:
            continue
        cache = forward_document(feats, params, dropout_mask=mask, dtype=dtype)
        probs = np.clip(cache["probs"], _PROB_CLIP, 1.0 - _PROB_CLIP)
        y = feats.labels
        losses = -(y * np.log(probs) + (1.0 - y) * np.log(1.0 - probs))
        loss_sum += (losses * cache["tril"]).sum()
    return loss_sum / total_pairs


def locate_flat_index(params: ModelParams, idx: int) -> str:
    pos = 0
    for name, shape in param_layout(params):
        size = int(np.prod(shape))
        if idx < pos + size:
            return f"{name}[{idx - pos}]"
        pos += size
    return f"<out of range {idx}>"


def grad_check(params: ModelParams, batch, eps: float = 1e-5,
               corrupt_coordinate: Optional[int] = None):
    """Max relative error between analytic and central-difference gradients.

    Returns (max_error, worst_flat_index).  The optional corruption knob
    perturbs one analytic coordinate and exists purely as a negative control.
    """
    if eps <= 0:
        raise InvalidConfig(f"eps must be positive, got {eps}")
    n = n_parameters(params)
    if n > _GRAD_CHECK_MAX_PARAMS:
        raise InvalidConfig(
            f"{n} parameters exceed the {_GRAD_CHECK_MAX_PARAMS} checker limit"
        )
    _, analytic = batch_backward(batch, params)
    if corrupt_coordinate is not None:
        analytic = analytic.copy()
        analytic[corrupt_coordinate] += 1e-3
    theta0 = flatten_params(params)
    worst, worst_idx = 0.0, 0
    theta = theta0.copy()
    wide = np.longdouble      # keeps the difference quotient above roundoff
    try:
        for i in range(n):
            theta[i] = theta0[i] + eps
            set_params_from_flat(params, theta)
            up = batch_loss(batch, params, dtype=wide)
            theta[i] = theta0[i] - eps
            set_params_from_flat(params, theta)
            down = batch_loss(batch, params, dtype=wide)
            theta[i] = theta0[i]
            numeric = float((up - down) / (2.0 * wide(eps)))
            err = abs(analytic[i] - numeric) / max(1e-8,
                                                   abs(analytic[i]) + abs(numeric))
            if err > worst:
                worst, worst_idx = err, i
    finally:
        set_params_from_flat(params, theta0)
    return worst, worst_idx


# --- the training loop ---------------------------------------------------------

def _dropout_mask(shape, p: float, seed_parts) -> Optional[np.ndarray]:
    if p <= 0.0:
        return None
    rng = np.random.default_rng(mix(*seed_parts))
    return (rng.random(shape) >= p) / (1.0 - p)


def train(corpus, provider, cfg: TrainConfig, arm: str = "full",
          dev_docs=None, mechanism: str = "cross", n_heads: int = 1,
          d_k: int = 0, pairwise_kind: str = "cosine",
          mention_repr: str = "head",
          resolution: Optional[ResolutionConfig] = None,
          inventories=None):
    """Train one ablation arm; returns (ModelParams, per-epoch history).

    History entries carry the mean training loss and, when ``dev_docs`` is
    given, the dev CoNLL F1 under greedy resolution.  Two runs with the same
    arguments produce bit-identical parameters.
    """
    cfg.validate()
    if arm not in ARM_SPECS:
        raise InvalidConfig(f"unknown arm {arm!r}")
    docs = list(corpus)
    if not docs:
        raise EmptyCorpus("training corpus is empty")
    if any(d.gold_chains is None for d in docs):
        raise EmptyCorpus("every training document needs gold chains")
    if inventories is None:
        from .syntax import Inventories
        inventories = Inventories.from_documents(docs)
    params = init_model(
        inventories, arm, provider, mechanism=mechanism, n_heads=n_heads,
        d_k=d_k, pairwise_kind=pairwise_kind, mention_repr=mention_repr,
        seed=cfg.seed,
    )
    features = [build_doc_features(doc, params) for doc in docs]
    # Start the decoder bias at the corpus prior log-odds: with a zero bias
    # the first updates drag every feature weight toward the prior instead of
    # toward discriminative directions, and the representation stages then
    # co-adapt to the wrong sign.
    n_pos = sum(float(f.labels.sum()) for f in features)
    n_all = sum(_count_pairs(f) for f in features)
    if n_all > 0:
        rate = min(max(n_pos / n_all, 1e-4), 1.0 - 1e-4)
        params.decoder.bias = math.log(rate / (1.0 - rate))
    dev_features = ([build_doc_features(doc, params) for doc in dev_docs]
                    if dev_docs else None)
    resolution = resolution or ResolutionConfig()

    theta = flatten_params(params)
    state = OptimizerState.zeros(theta.size)
    t_mask = trainable_mask(params, arm)
    decay_mask = t_mask * (1.0 - bias_mask(params))

    n_batches = math.ceil(len(docs) / cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    history = []
    global_step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(mix(cfg.seed, 1000 + epoch)).permutation(
            len(docs)
        )
        losses = []
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = [features[i] for i in idx]
            masks = [
                _dropout_mask(f.E.shape, cfg.dropout,
                              (cfg.seed, epoch, b, slot))
                for slot, f in enumerate(batch)
            ]
            try:
                loss, grad = batch_backward(batch, params, dropout_masks=masks)
            except EmptyBatch:
                continue
            except NonFiniteGradient as exc:
                raise NonFiniteGradient(
                    f"epoch {epoch} batch {b}: {exc}"
                ) from exc
            grad = grad * t_mask
            grad = clip_gradients(grad, cfg.clip_norm)
            lr = lr_schedule(global_step, total_steps, cfg)
            theta, state = adamw_step(theta, grad, state, lr,
                                      cfg.weight_decay, decay_mask=decay_mask)
            set_params_from_flat(params, theta)
            losses.append(loss)
            global_step += 1
        entry = {"epoch": epoch,
                 "loss": float(np.mean(losses)) if losses else None,
                 "dev_f1": None}
        if dev_features is not None:
            entry["dev_f1"] = _dev_f1(params, dev_features, resolution)
        history.append(entry)
    return params, history


def _dev_f1(params: ModelParams, dev_features, resolution) -> float:
    pairs = []
    for feats in dev_features:
        cache = forward_document(feats, params)
        pred = resolve(feats.doc, cache["probs"], resolution)
        pairs.append((feats.doc.gold_chains, pred))
    return corpus_prf(pairs)["conll_f1"]
