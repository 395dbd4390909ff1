"""Exception hierarchy for the segmentation toolkit.

Every error carries the CLI exit code it maps to and a ``detail`` dict that the
exception handlers render into the JSEND-style payload.
"""
from typing import Any, Dict, Optional

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_CONFIG_ERROR = 2


class PulseDTWError(Exception):
    exit_code = EXIT_INPUT_ERROR

    def __init__(self, message: str, detail: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.detail = detail or {}


class InputError(PulseDTWError):
    """Unreadable or malformed input data."""


class ParseError(InputError):
    def __init__(self, message: str, line: int, path: Optional[str] = None):
        super().__init__(f"line {line}: {message}", {"line": line, "path": path})
        self.line = line


class EmptyInputError(InputError):
    pass


class SchemaError(InputError):
    def __init__(self, column: str, path: Optional[str] = None):
        super().__init__(f"missing required column '{column}'", {"column": column, "path": path})
        self.column = column


class ConfigurationError(PulseDTWError):
    exit_code = EXIT_CONFIG_ERROR

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message, {"field": field} if field else None)
        self.field = field


class InsufficientDataError(PulseDTWError):
    pass


class NoDominantFrequencyError(PulseDTWError):
    pass


class DegenerateBatchError(PulseDTWError):
    pass


class NoPathError(PulseDTWError):
    pass


class MappingError(PulseDTWError):
    def __init__(self, message: str, fiducial_class: Optional[str] = None):
        super().__init__(message, {"class": fiducial_class} if fiducial_class else None)
        self.fiducial_class = fiducial_class


class LabelingError(PulseDTWError):
    pass


class EnsembleError(PulseDTWError):
    pass
