"""
Error hierarchy shared by every package.

Modules raise these; only the CLI boundary catches them and turns them into
exit codes (1 for input/config problems, 2 for numerical failures).
"""

from typing import Any, Optional


class GritLPError(Exception):
    """Base class for all pipeline errors"""

    exit_code = 1


class DimensionError(GritLPError):
    """Operand shapes are incompatible"""


class UsageError(GritLPError):
    """An API was called out of sequence"""


class RecordParseError(GritLPError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class RecordValidationError(GritLPError):
    def __init__(self, message: str, record_id: Optional[str] = None):
        prefix = f"record {record_id!r}: " if record_id is not None else ""
        super().__init__(prefix + message)
        self.record_id = record_id


class InsufficientDataError(GritLPError):
    """Not enough records, layers or nodes for the requested operation"""


class ConfigError(GritLPError):
    """Invalid configuration value (message names the field)"""


class NumericalError(GritLPError):
    """NaN or Inf reached a loss or gradient"""

    exit_code = 2

    def __init__(
        self,
        message: str,
        param_name: Optional[str] = None,
        last_good_checkpoint: Optional[Any] = None,
    ):
        super().__init__(message)
        self.param_name = param_name
        self.last_good_checkpoint = last_good_checkpoint
