"""Exception types shared across the engine.

Every error raised by a public operation is one of these named classes so
callers can catch contract violations precisely.
"""


class SuperpromptError(Exception):
    """Base class for all engine errors."""


# --- graph construction ---

class EmptyDocumentSet(SuperpromptError):
    """A fork was requested over zero documents."""


class EmptySegment(SuperpromptError):
    """A segment that must carry tokens has none."""


class FactorOutOfRange(SuperpromptError):
    """Superposition factor outside [1, document count]."""


class GraphInvariantError(SuperpromptError):
    """A graph violates acyclicity / reachability / id-uniqueness."""


# --- positioning ---

class NonPositiveStep(SuperpromptError):
    """Arange step must be > 0."""


class EmptyList(SuperpromptError):
    """Harmonic span of an empty length list."""


# --- language model ---

class PositionOrderViolation(SuperpromptError):
    """Positions do not respect the required ordering."""


class ModelMismatch(SuperpromptError):
    """KV caches from different models were combined."""


class VocabOverflow(SuperpromptError):
    """A token id is outside the model vocabulary."""


class NegativeDistance(SuperpromptError):
    """ALiBi bias queried with key position ahead of query position."""


# --- saliency ---

class SegmentTooShort(SuperpromptError):
    """Shifted cross-entropy needs at least two tokens."""


class SummariesUnavailable(SuperpromptError):
    """Attention saliency requested but backend exposed no summaries."""


# --- cache store ---

class DimensionMismatch(SuperpromptError):
    """Cache record tensor dims inconsistent with the model shape."""


class StorageFull(SuperpromptError):
    """Byte budget exceeded and record cannot be admitted."""


class CorruptRecord(SuperpromptError):
    """Stored record failed its checksum."""


# --- runtime ---

class NoPathsSelected(SuperpromptError):
    """Path selection returned an empty set (contract violation)."""


class IterationBudgetExceeded(SuperpromptError):
    """Iterative serving asked for t*k > available documents."""


# --- dataset ingestion ---

class ParseError(SuperpromptError):
    """A dataset line is not valid JSON."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class SchemaError(SuperpromptError):
    """A dataset record is missing a required field."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


# --- remote backend ---

class ProtocolVersionMismatch(SuperpromptError):
    """Remote backend speaks an incompatible protocol version."""


class UnknownCacheId(SuperpromptError):
    """Remote cache id is not live on the server."""


class PositionUnsupported(SuperpromptError):
    """Backend cannot realize the requested (real-valued) positions."""


class RemoteProtocolError(SuperpromptError):
    """Malformed frame or unexpected reply from a remote backend."""
