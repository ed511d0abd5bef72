"""Error categories and process exit codes for tqnn."""

from typing import Optional

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5
EXIT_INTERRUPTED = 130


class TqnnError(Exception):
    """Base class for all tqnn errors."""

    exit_code = EXIT_FAILURE


class ContractError(TqnnError, ValueError):
    """A documented pre-condition of an operation was violated."""


class DimensionError(ContractError):
    """Tensor shapes do not agree."""


class ConfigError(TqnnError, ValueError):
    """Invalid or inconsistent configuration."""

    exit_code = EXIT_CONFIG


class FormatError(TqnnError, ValueError):
    """Input data does not have the expected format."""

    exit_code = EXIT_FORMAT


class ParseError(FormatError):
    """Text input could not be parsed; carries the offending line when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StratificationError(TqnnError, ValueError):
    """A class has too few rows for a stratified split."""

    exit_code = EXIT_CONFIG


class UnsupportedGateError(TqnnError, ValueError):
    """Gate kind not supported by the requested operation."""


class QubitIndexError(TqnnError, IndexError):
    """Qubit index outside the register."""


class NumericalError(TqnnError, ArithmeticError):
    """NaN or Inf appeared in a computation."""

    exit_code = EXIT_NUMERICAL
