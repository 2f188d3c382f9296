"""Exception types shared across the harness."""

from __future__ import annotations


class RagmeterError(Exception):
    """Base class for all harness errors."""


class ConfigError(RagmeterError):
    """Invalid configuration or mismatched backend wiring."""


class CorpusNotFoundError(RagmeterError):
    """No corpus persisted under the requested id."""


class CorpusCorruptedError(RagmeterError):
    """Passage store bytes no longer match the manifest checksum."""


class DuplicateDocError(RagmeterError):
    """Two input documents share a doc_id."""


class EmptyCorpusError(RagmeterError):
    """An operation requires at least one passage."""


class TransportError(RagmeterError):
    """Backend unreachable after exhausting the retry budget."""


class ProtocolError(RagmeterError):
    """Backend response violated the wire contract."""


class DimensionDriftError(RagmeterError):
    """Embedding backend changed output dimension mid-run."""


class StageError(RagmeterError):
    """A pipeline stage failed; partial artifacts may exist."""
