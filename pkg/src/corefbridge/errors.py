"""Exception types shared across the engine.

Corpus errors carry enough location information (document id, sentence
index, input line number) to point at the offending annotation.
"""

from __future__ import annotations


class CorefBridgeError(Exception):
    """Base class for all engine errors."""


class InvalidConfig(CorefBridgeError):
    pass


# --- corpus ---------------------------------------------------------------

class CorpusError(CorefBridgeError):
    def __init__(self, message, doc_id=None, sentence=None, line=None):
        parts = [message]
        if doc_id is not None:
            parts.append(f"doc={doc_id!r}")
        if sentence is not None:
            parts.append(f"sentence={sentence}")
        if line is not None:
            parts.append(f"line={line}")
        super().__init__(" ".join(parts))
        self.doc_id = doc_id
        self.sentence = sentence
        self.line = line


class MalformedLine(CorpusError):
    pass


class CycleInTree(CorpusError):
    pass


class MultipleRoots(CorpusError):
    pass


class DanglingHead(CorpusError):
    pass


class BadMentionSpan(CorpusError):
    pass


class DuplicateMentionId(CorpusError):
    pass


class OverlappingChains(CorpusError):
    pass


class BadChainReference(CorpusError):
    pass


class TreeCountMismatch(CorpusError):
    pass


class TreeTokenMismatch(CorpusError):
    pass


# --- embeddings -----------------------------------------------------------

class EmbeddingError(CorefBridgeError):
    pass


class RemoteUnavailable(EmbeddingError):
    pass


class Timeout(EmbeddingError):
    pass


class DimensionMismatch(EmbeddingError):
    pass


class NonFiniteEmbedding(EmbeddingError):
    pass


# --- numerics -------------------------------------------------------------

class ShapeMismatch(CorefBridgeError):
    pass


class NonFiniteInput(CorefBridgeError):
    pass


# --- resolver -------------------------------------------------------------

class SameMention(CorefBridgeError):
    pass


class OrderViolation(CorefBridgeError):
    pass


# --- training -------------------------------------------------------------

class EmptyBatch(CorefBridgeError):
    pass


class EmptyCorpus(CorefBridgeError):
    pass


class NonFiniteGradient(CorefBridgeError):
    pass


class VersionMismatch(CorefBridgeError):
    pass


# --- metrics --------------------------------------------------------------

class UniverseMismatch(CorefBridgeError):
    pass


class NoPositives(CorefBridgeError):
    pass
