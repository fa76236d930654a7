"""Contextual token embeddings from pluggable providers.

Two providers satisfy the same matrix contract: an offline feature-hash
embedder (deterministic, no model required) and a client for a remote
embedding service speaking a one-request-per-document JSON protocol.
"""

from __future__ import annotations

import json
import socket
import urllib.error
import urllib.request
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .corpus import Document, doc_to_json
from .errors import (
    DimensionMismatch,
    InvalidConfig,
    NonFiniteEmbedding,
    RemoteUnavailable,
    Timeout,
)
from .hashing import hash_string

#: Signed projections per feature; >1 keeps distinct labels nearly orthogonal
#: at small dimensions.
_PROJECTIONS_PER_FEATURE = 4


@dataclass(frozen=True)
class EmbeddingMatrix:
    data: np.ndarray      # n_tokens x dim, float64

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def validate(self, expected_rows: Optional[int] = None) -> None:
        if self.data.ndim != 2:
            raise DimensionMismatch(f"expected a matrix, got ndim={self.data.ndim}")
        if expected_rows is not None and self.rows != expected_rows:
            raise DimensionMismatch(
                f"expected {expected_rows} rows, got {self.rows}"
            )
        if not np.isfinite(self.data).all():
            raise NonFiniteEmbedding("embedding matrix contains NaN/Inf")


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "feature_hash"        # feature_hash | remote
    dim: int = 64                     # 768 mirrors the full-scale setting
    window: int = 2
    seed: int = 0
    endpoint: Optional[str] = None
    timeout_ms: int = 5000

    def validate(self) -> None:
        if self.kind not in ("feature_hash", "remote"):
            raise InvalidConfig(f"unknown provider kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise InvalidConfig("remote provider requires an endpoint")
        if self.dim < 8:
            raise InvalidConfig(f"dim must be >= 8, got {self.dim}")
        if self.window < 0:
            raise InvalidConfig(f"window must be >= 0, got {self.window}")
        if self.timeout_ms <= 0:
            raise InvalidConfig(f"timeout_ms must be positive, got {self.timeout_ms}")


@lru_cache(maxsize=1 << 16)
def _feature_hashes(feature: str, seed: int) -> tuple:
    return tuple(
        hash_string(f"{k}\x1f{feature}", seed)
        for k in range(_PROJECTIONS_PER_FEATURE)
    )


def _accumulate(vec: np.ndarray, feature: str, seed: int) -> None:
    dim = vec.shape[0]
    for h in _feature_hashes(feature, seed):
        sign = 1.0 if (h >> 63) & 1 else -1.0
        vec[h % dim] += sign


def hash_embed_label(label: str, dim: int, seed: int) -> np.ndarray:
    """Unit-norm hash embedding of a bare label string (used for roles)."""
    vec = np.zeros(dim, dtype=np.float64)
    _accumulate(vec, f"label:{label}", seed)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec[_feature_hashes(f"label:{label}", seed)[0] % dim] = 1.0
        norm = 1.0
    return vec / norm


def feature_hash_embed(doc: Document, dim: int, window: int,
                       seed: int) -> EmbeddingMatrix:
    """Offline contextual embeddings via signed feature hashing.

    Each token accumulates projections of its surface, POS tag, dependency
    relation and the neighbor surfaces within ``window`` (tagged by offset),
    then rows are L2-normalized.  Pure function of its arguments.
    """
    if dim < 8:
        raise InvalidConfig(f"dim must be >= 8, got {dim}")
    if window < 0:
        raise InvalidConfig(f"window must be >= 0, got {window}")
    rows = np.zeros((doc.n_tokens, dim), dtype=np.float64)
    r = 0
    for sent in doc.sentences:
        n = len(sent)
        for i, tok in enumerate(sent):
            vec = rows[r]
            _accumulate(vec, f"s:{tok.surface}", seed)
            _accumulate(vec, f"p:{tok.upos}", seed)
            _accumulate(vec, f"d:{tok.deprel}", seed)
            for off in range(-window, window + 1):
                if off == 0 or not (0 <= i + off < n):
                    continue
                _accumulate(vec, f"n{off}:{sent[i + off].surface}", seed)
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                vec[_feature_hashes(f"s:{tok.surface}", seed)[0] % dim] = 1.0
                norm = 1.0
            vec /= norm
            r += 1
    return EmbeddingMatrix(rows)


def role_matrix(doc: Document, dim: int, seed: int) -> np.ndarray:
    """Per-token embeddings of semantic-role labels (deprel when absent)."""
    out = np.zeros((doc.n_tokens, dim), dtype=np.float64)
    r = 0
    for sent in doc.sentences:
        for tok in sent:
            label = tok.role if tok.role is not None else tok.deprel
            out[r] = hash_embed_label(label, dim, seed)
            r += 1
    return out


def remote_embed(cfg: ProviderConfig, doc: Document) -> EmbeddingMatrix:
    """Fetch embeddings for one document from the remote service.

    Single synchronous POST of the canonical document serialization; no
    retries (callers decide).  The response must carry exactly
    n_tokens x dim finite floats.
    """
    cfg.validate()
    url = cfg.endpoint.rstrip("/")
    if not url.endswith("/embed"):
        url += "/embed"
    body = doc_to_json(doc).encode("utf-8")
    req = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(req, timeout=cfg.timeout_ms / 1000.0) as resp:
            if resp.status != 200:
                raise RemoteUnavailable(f"status {resp.status} from {url}")
            payload = json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        raise RemoteUnavailable(f"status {exc.code} from {url}") from exc
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, (socket.timeout, TimeoutError)):
            raise Timeout(f"no response from {url} within {cfg.timeout_ms} ms") from exc
        raise RemoteUnavailable(f"cannot reach {url}: {exc.reason}") from exc
    except (socket.timeout, TimeoutError) as exc:
        raise Timeout(f"no response from {url} within {cfg.timeout_ms} ms") from exc

    try:
        rows, dim = int(payload["rows"]), int(payload["dim"])
        data = np.asarray(payload["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise RemoteUnavailable(f"malformed response from {url}: {exc}") from exc
    if rows != doc.n_tokens or dim != cfg.dim or data.size != rows * dim:
        raise DimensionMismatch(
            f"service returned {rows}x{dim} ({data.size} values), "
            f"expected {doc.n_tokens}x{cfg.dim}"
        )
    matrix = EmbeddingMatrix(data.reshape(rows, dim))
    if not np.isfinite(matrix.data).all():
        raise NonFiniteEmbedding(f"service returned non-finite values from {url}")
    return matrix


def embed_document(cfg: ProviderConfig, doc: Document) -> EmbeddingMatrix:
    """Embed every token of a validated document with the configured provider."""
    cfg.validate()
    if cfg.kind == "feature_hash":
        matrix = feature_hash_embed(doc, cfg.dim, cfg.window, cfg.seed)
    else:
        matrix = remote_embed(cfg, doc)
    matrix.validate(expected_rows=doc.n_tokens)
    return matrix
