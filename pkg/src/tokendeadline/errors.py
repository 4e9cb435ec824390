"""Exception types shared across the package."""

from __future__ import annotations


class TokenDeadlineError(Exception):
    """Base class for all package-specific errors."""


class DuplicateRecordError(TokenDeadlineError):
    """A record with an already-present (question, model, strategy, index) key."""

    def __init__(self, key: tuple):
        super().__init__(f"duplicate record key: {key!r}")
        self.key = key


class LogFormatError(TokenDeadlineError):
    """A run-log or dataset file line failed to parse or validate."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class SchemaVersionError(TokenDeadlineError):
    """File schema string does not match the supported version."""


class UnknownQuestionError(TokenDeadlineError):
    """A question id is missing from a binning or reference artifact."""


class GradingError(TokenDeadlineError):
    """A record cannot be graded, or metrics hit an ungraded record."""


class TransportError(TokenDeadlineError):
    """A network call failed after the configured retries."""


class JudgeTimeoutError(TransportError):
    """The judge endpoint could not be reached."""


class JudgeRefusalError(TokenDeadlineError):
    """The judge replied, but never in the requested format."""


class EpisodeError(TokenDeadlineError):
    """An episode aborted mid-run; carries the partial transcript."""

    def __init__(self, message: str, transcript: tuple = ()):
        super().__init__(message)
        self.transcript = transcript


class HarnessError(TokenDeadlineError):
    """A harness command could not satisfy its postconditions."""
