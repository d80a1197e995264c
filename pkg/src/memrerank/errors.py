"""Exception hierarchy shared by all memrerank modules.

Errors are grouped so the CLI can map them onto distinct exit codes:
``ConfigError`` (2), ``MissingInputError`` (3), ``ValidationError`` and
subclasses (4), ``BackendError`` and subclasses (5).
"""

from __future__ import annotations


class MemrerankError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MemrerankError):
    """Invalid or contradictory run configuration."""


class MissingInputError(MemrerankError):
    """A pipeline stage input file is absent; names the producing stage."""

    def __init__(self, stage: str, detail: str = ""):
        self.stage = stage
        message = f"missing input produced by stage '{stage}'"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class ValidationError(MemrerankError):
    """Input data violates a structural or numeric contract."""


class EmptyListError(ValidationError):
    """A candidate list contains no candidates."""


class NonFiniteScoreError(ValidationError):
    """A candidate score is NaN or infinite."""


class NonFiniteTimeError(ValidationError):
    """A timestamp is NaN or infinite."""


class NegativeTimeError(ValidationError):
    """An interval starts before time zero."""


class InvertedIntervalError(ValidationError):
    """An interval ends before it starts (or is degenerate where forbidden)."""


class InvalidRankError(ValidationError):
    """A candidate rank is not a positive 1-based position."""


class ZeroLengthSegmentError(ValidationError):
    """A segment with no duration cannot be decomposed into clips."""


class ParseError(ValidationError):
    """A file is not syntactically valid; carries location information."""

    def __init__(self, path: str, line: int, column: int, detail: str):
        self.path = path
        self.line = line
        self.column = column
        super().__init__(f"{path}:{line}:{column}: {detail}")


class SchemaViolation(ValidationError):
    """A parsed record breaks the declared schema; names the field."""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        message = f"schema violation in field '{field}'"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class GtOutOfBoundsError(ValidationError):
    """A ground-truth interval falls outside its video duration."""

    def __init__(self, query_id: str, detail: str = ""):
        self.query_id = query_id
        message = f"ground truth out of bounds for query '{query_id}'"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class UnknownQueryIdError(ValidationError):
    """A record references a query id absent from the dataset."""


class NoQueriesError(ValidationError):
    """Metrics were requested over an empty query set."""


class InvalidKnobsError(ValidationError):
    """Scenario generation knobs are outside their stated ranges."""


class IndexOutOfRangeError(ValidationError):
    """A selection index does not address a candidate in its list."""


class EmptyCandidateListError(ValidationError):
    """A sequence task query has no candidates to select from."""


class InstanceTooLargeError(ValidationError):
    """Exhaustive search was requested on too large a selection space."""


class MissingNarrationError(ValidationError):
    """An episodic memory is missing the narration for one of its clips."""


class MemoryCountMismatchError(ValidationError):
    """The number of memories does not match the number of candidates."""


class ImageLimitExceededError(ValidationError):
    """A narration request carries more images than the per-request cap."""


class BackendError(MemrerankError):
    """Base class for multimodal-backend failures."""


class BackendUnavailableError(BackendError):
    """Transient backend failure that persisted through all retries."""


class EmptyNarrationError(BackendError):
    """The backend kept returning empty text for a narration request."""


class BackendRejectedError(BackendError):
    """The backend rejected a request permanently (non-retryable)."""


class FrameUnavailableError(BackendError):
    """A referenced frame image could not be located or extracted."""
