"""Exception types shared across the package.

Plain ``ValueError`` is used for bad arguments; the classes here cover
failure modes that callers might want to catch separately.
"""

from __future__ import annotations


class NumericFailure(RuntimeError):
    """Linear-algebra breakdown that survived regularization."""


class FormatError(ValueError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TransportError(RuntimeError):
    """Remote oracle unreachable or timed out."""


class RemoteRejection(RuntimeError):
    """Remote oracle rejected the request (HTTP 400 with an error body)."""


class TaskGenerationError(RuntimeError):
    """Synthetic task generation exhausted its retry budget."""


class RoundFailure(RuntimeError):
    """A client's local round aborted; carries the client id."""

    def __init__(self, client_id: int, message: str):
        super().__init__(f"client {client_id}: {message}")
        self.client_id = client_id
