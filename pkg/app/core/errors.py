"""Service exceptions.

Every error carries a machine-readable ``category`` so the CLI and the API can
report failures without parsing messages.
"""

from __future__ import annotations


class SwinGNNError(RuntimeError):
    """Base error; ``category`` is reported as the machine-readable cause."""

    category = "internal"

    def __init__(self, message: str, *, category: str | None = None) -> None:
        super().__init__(message)
        if category is not None:
            self.category = category


class InvalidInputError(SwinGNNError, ValueError):
    category = "invalid_input"


class UnsupportedSizeError(InvalidInputError):
    """Raised when an exhaustive routine is asked for a graph that is too large."""

    category = "unsupported_size"

    def __init__(self, n: int, limit: int, operation: str) -> None:
        super().__init__(f"{operation} supports at most {limit} nodes, got {n}")
        self.n = n
        self.limit = limit


class ShapeMismatchError(InvalidInputError):
    category = "shape_mismatch"


class ConfigError(InvalidInputError):
    category = "config"


class GraphParseError(InvalidInputError):
    category = "parse_error"

    def __init__(self, message: str, *, line_number: int, path: str | None = None) -> None:
        where = f"{path}:{line_number}" if path else f"line {line_number}"
        super().__init__(f"{where}: {message}")
        self.line_number = line_number
        self.path = path


class SamplingDivergedError(SwinGNNError):
    category = "sampling_diverged"

    def __init__(self, message: str, *, step: int | None = None) -> None:
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class TrainingDivergedError(SwinGNNError):
    category = "training_diverged"

    def __init__(
        self,
        message: str,
        *,
        epoch: int | None = None,
        last_checkpoint: str | None = None,
    ) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.last_checkpoint = last_checkpoint
