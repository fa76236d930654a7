"""Deterministic 64-bit string hashing used by the feature-hash embedder.

The mixer is splitmix64 (Steele, Lea & Flood 2014), chosen because it is a
published, fixed function that is trivial to port: determinism of corpora,
embeddings and weights files relies on it never changing.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 scrambling round of a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def hash_string(s: str, seed: int = 0) -> int:
    """Hash a unicode string to 64 bits, folding bytes through splitmix64."""
    h = splitmix64(seed & _MASK)
    for chunk in s.encode("utf-8"):
        h = splitmix64(h ^ chunk)
    return h


def mix(*parts: int) -> int:
    """Combine integers into one 64-bit value (for derived RNG seeds)."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h = splitmix64(h ^ (p & _MASK))
    return h
