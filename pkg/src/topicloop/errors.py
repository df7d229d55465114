"""Exception types shared across the package."""


class TopicLoopError(Exception):
    """Base class for all package errors."""


class FormatError(TopicLoopError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class EmptyVocabulary(TopicLoopError):
    """No word survived the vocabulary filters."""


class EmptyDocument(TopicLoopError):
    """Document has no in-vocabulary tokens."""


class ShapeError(TopicLoopError):
    """Array dimensions inconsistent with the configured model sizes."""


class ZeroVector(TopicLoopError):
    """Embedding vector with near-zero norm cannot enter a cosine distance."""


class MissingEmbedding(TopicLoopError):
    """Word without an embedding reached the cost matrix (programming error)."""


class NumericalOverflow(TopicLoopError):
    """A scaling factor became non-finite; raise epsilon and retry."""


class LengthMismatch(TopicLoopError):
    """Paired vectors or label lists have different lengths."""


class ParseFailure(TopicLoopError):
    """Completion text contains no JSON object with the expected keys."""


class SpanNotFound(TopicLoopError):
    """The label string could not be located in the completion tokens."""


class MissingLogprobs(TopicLoopError):
    """The backend did not return token log-probabilities."""


class TransportError(TopicLoopError):
    """HTTP transport failed after retries."""


class BackendError(TopicLoopError):
    """The chat backend answered with a non-retryable error status."""


class UnknownTemplate(TopicLoopError):
    """Prompt template id is not registered."""


class CacheIoError(TopicLoopError):
    """Suggestion cache persistence failed (non-fatal)."""


class ConfigError(TopicLoopError):
    """Invalid training or CLI configuration."""
