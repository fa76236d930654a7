"""corefbridge: coreference resolution bridging dependency syntax and semantics."""

__version__ = "0.1.0"
