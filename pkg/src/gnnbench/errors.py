from __future__ import annotations

__all__ = [
    "ContainerError",
    "DataError",
    "DivergenceError",
    "GnnBenchError",
    "ParseError",
    "PreprocessError",
    "SplitError",
    "TrialError",
    "UsageError",
]


class GnnBenchError(Exception):
    """Base class for every error the benchmark reports to its caller."""

    exit_code: int = 3


class UsageError(GnnBenchError):
    """Malformed command line, config document or override."""

    exit_code = 1


class DataError(GnnBenchError):
    """Input data cannot be used as given."""

    exit_code = 2


class ContainerError(DataError):
    """Dataset container is missing files or violates its format."""


class ParseError(DataError):
    """Text bundle could not be parsed.

    The message always names the file and, when known, the 1-based line.
    """

    def __init__(self, path: object, message: str, line: int | None = None):
        """Build a diagnostic pointing at ``path`` (and ``line`` if given)."""
        location = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line


class PreprocessError(DataError):
    """A preprocessing stage produced an empty result."""


class SplitError(DataError):
    """A train/validation/test split cannot be built or is inconsistent."""


class TrialError(GnnBenchError):
    """Training could not produce any usable result."""

    exit_code = 3


class DivergenceError(TrialError):
    """Non-finite values appeared in model outputs during training."""
