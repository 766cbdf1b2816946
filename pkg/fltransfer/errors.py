# errors.py
# Exception types shared by the library, the CLI and the web front end.

from typing import Any, Dict, Optional


class FLTransferError(Exception):
    """Base class for every error raised by fltransfer."""


class ArgumentError(FLTransferError, ValueError):
    pass


class DomainError(ArgumentError):
    """A point lies outside the kernel or curve domain."""


class NumericalError(FLTransferError, ArithmeticError):
    """A factorisation or aggregation step failed; `diagnostics` says where."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        extra = ", ".join(f"{k}={v}" for k, v in sorted(self.diagnostics.items()))
        return f"{base} ({extra})"


class ConfigError(FLTransferError, ValueError):
    pass


class CsvFormatError(ConfigError):
    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column
