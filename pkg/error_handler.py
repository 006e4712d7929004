"""
Error Handler Module
====================
Error hierarchy for the toolkit and helpers that turn exceptions into
short, user-facing CLI messages.
"""

import logging
from typing import Any, Dict, Optional
from enum import Enum


logger = logging.getLogger(__name__)


class ErrorSeverity(Enum):
    """Error severity levels."""
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"


class ApplicationError(Exception):
    """Base class for application-specific errors."""

    def __init__(
        self,
        message: str,
        severity: ErrorSeverity = ErrorSeverity.ERROR,
        user_message: Optional[str] = None,
        recovery_hint: Optional[str] = None
    ):
        super().__init__(message)
        self.severity = severity
        self.user_message = user_message or message
        self.recovery_hint = recovery_hint


class AlignmentError(ApplicationError):
    """Two parameter sets (or a set and a mask) do not share names, order and shapes."""

    def __init__(self, message: str, entry: Optional[str] = None, **kwargs):
        kwargs.setdefault(
            'recovery_hint',
            "Check that both checkpoints come from the same model configuration."
        )
        super().__init__(message=message, severity=ErrorSeverity.ERROR, **kwargs)
        self.entry = entry


class DomainError(ApplicationError):
    """An argument lies outside the domain of the operation."""

    def __init__(self, message: str, **kwargs):
        super().__init__(message=message, severity=ErrorSeverity.ERROR, **kwargs)


class DegenerateMaskError(DomainError):
    """Pruning would leave no weight in the mask."""

    def __init__(self, message: str, **kwargs):
        kwargs.setdefault(
            'recovery_hint',
            "Lower the pruning fraction or the number of IMP iterations."
        )
        super().__init__(message=message, **kwargs)


class FormatError(ApplicationError):
    """A binary file (IDX or LPCK) is structurally invalid."""

    def __init__(self, message: str, offset: Optional[int] = None, **kwargs):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message=message, severity=ErrorSeverity.ERROR, **kwargs)
        self.offset = offset


class CorruptionError(FormatError):
    """Checksum mismatch: the file parsed but its payload was altered."""

    def __init__(self, message: str, offset: Optional[int] = None, **kwargs):
        kwargs.setdefault('recovery_hint', "Re-run the step that produced this file.")
        super().__init__(message=message, offset=offset, **kwargs)
        self.severity = ErrorSeverity.CRITICAL


class ConfigError(ApplicationError):
    """Configuration file or preset validation failure."""

    def __init__(self, message: str, **kwargs):
        super().__init__(message=message, severity=ErrorSeverity.ERROR, **kwargs)


class DataLoadError(ApplicationError):
    """Data loading errors."""

    def __init__(self, message: str, **kwargs):
        super().__init__(
            message=message,
            severity=ErrorSeverity.WARNING,
            **kwargs
        )


def get_user_friendly_error(error: Exception) -> str:
    """
    Convert exception to a one-line message suitable for stderr.

    Args:
        error: Exception object

    Returns:
        User-friendly error message
    """
    if isinstance(error, ApplicationError):
        return error.user_message

    error_type = type(error).__name__
    error_str = str(error).lower()

    if isinstance(error, FileNotFoundError) or 'no such file' in error_str:
        return f"Required file not found: {getattr(error, 'filename', None) or error}"

    if isinstance(error, PermissionError) or 'permission' in error_str:
        return "Permission denied. Check that the output directory is writable."

    if isinstance(error, MemoryError) or 'out of memory' in error_str:
        return "Insufficient memory. Try a smaller model or dataset subset."

    return f"Unexpected error ({error_type}): {error}"


def format_error(
    error: Exception,
    context: Optional[str] = None,
    include_recovery: bool = True
) -> Dict[str, Any]:
    """
    Format an error as a flat record for logs and the CLI.

    Args:
        error: Exception object
        context: Additional context (usually the subcommand)
        include_recovery: Whether to include recovery instructions

    Returns:
        Dictionary with formatted error information
    """
    result = {
        'type': type(error).__name__,
        'message': get_user_friendly_error(error),
        'severity': 'error',
    }

    if context:
        result['context'] = context

    if isinstance(error, ApplicationError):
        result['severity'] = error.severity.value
        if include_recovery and error.recovery_hint:
            result['recovery_hint'] = error.recovery_hint

    return result
