"""
ECON Errors

One root exception so the CLI can map failures to exit codes.
"""

from typing import Any, Dict, Iterable, Optional


class EconError(Exception):
    """Base class for every error raised by the package."""

    exit_code: int = 1


class ConfigError(EconError):
    exit_code = 2


class DataError(EconError):
    """Anything wrong with input data."""

    exit_code = 3


class ParseError(DataError):
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(f"{where}{message}")


class DataValidationError(DataError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DuplicateKeyError(DataValidationError):
    pass


class ChainingError(DataError):
    def __init__(self, message: str, pair: Optional[tuple] = None):
        self.pair = pair
        super().__init__(message)


class AlignmentError(DataError):
    def __init__(self, message: str, missing: Iterable[Any] = ()):
        self.missing = list(missing)
        shown = ", ".join(str(m) for m in self.missing[:10])
        more = f" (+{len(self.missing) - 10} more)" if len(self.missing) > 10 else ""
        super().__init__(f"{message}: {shown}{more}" if self.missing else message)


class MappingError(DataError):
    pass


class MaskingError(DataError):
    pass


class EncodingError(DataError):
    pass


class ContractError(EconError):
    """A caller broke a documented precondition (shapes, ranges, ordering)."""


class DomainError(ContractError):
    pass


class CalibrationError(EconError):
    exit_code = 4


class TrainingError(EconError):
    exit_code = 4

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message} {self.diagnostics}" if self.diagnostics else message)


class UndefinedMetricError(EconError):
    pass


class StageError(EconError):
    exit_code = 4

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
        if isinstance(cause, EconError):
            self.exit_code = cause.exit_code
