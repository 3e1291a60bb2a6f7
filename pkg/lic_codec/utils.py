"""
Utility functions and custom exceptions for the LIC codec.

This module provides the root exception class, error handling helpers,
logging setup, timing and JSON export utilities used throughout the codec,
search and benchmark code.
"""

import functools
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, Optional, TypeVar, Union

JSON_INDENT = 2


# Custom Exception Classes
class LicCodecError(Exception):
    """Base exception for the LIC codec."""

    pass


class DataValidationError(LicCodecError):
    """Raised when data validation fails."""

    pass


class FileOperationError(LicCodecError):
    """Raised when file operations fail."""

    pass


T = TypeVar("T")


class ErrorHandler:
    """
    Context manager for handling errors with customizable behavior.
    """

    def __init__(
        self,
        operation_name: str,
        logger: Optional[logging.Logger] = None,
        suppress_exceptions: bool = False,
        default_return: Any = None,
        error_callback: Optional[Callable[[Exception], Any]] = None,
    ):
        """
        Initialize error handler.

        Args:
            operation_name: Name of the operation for logging
            logger: Optional logger instance
            suppress_exceptions: Whether to suppress exceptions and return default
            default_return: Default value to return if exception is suppressed
            error_callback: Optional callback function to call on error
        """
        self.operation_name = operation_name
        self.logger = logger or logging.getLogger(__name__)
        self.suppress_exceptions = suppress_exceptions
        self.default_return = default_return
        self.error_callback = error_callback
        self.exception_occurred = False
        self.exception: Optional[BaseException] = None

    def __enter__(self) -> "ErrorHandler":
        """Enter the context manager."""
        self.logger.debug(f"Starting {self.operation_name}")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> bool:
        """Exit the context manager and handle any exceptions."""
        if exc_type is not None:
            self.exception_occurred = True
            self.exception = exc_val

            self.logger.error(f"{self.operation_name} failed: {exc_val}")

            if self.error_callback:
                try:
                    self.error_callback(exc_val)
                except Exception as callback_error:
                    self.logger.error(f"Error callback failed: {callback_error}")

            if self.suppress_exceptions:
                self.logger.info(f"Suppressing exception for {self.operation_name}, returning default value")
                return True
        else:
            self.logger.debug(f"{self.operation_name} completed successfully")

        return False

    def get_result(self, success_value: Any = None) -> Any:
        """
        Get the result based on whether an exception occurred.

        Args:
            success_value: Value to return if no exception occurred

        Returns:
            Success value if no exception, default_return if exception was suppressed
        """
        if self.exception_occurred and self.suppress_exceptions:
            return self.default_return
        return success_value


def safe_execute(
    func: Callable[..., T],
    *args,
    default: Any = None,
    logger: Optional[logging.Logger] = None,
    operation_name: Optional[str] = None,
    **kwargs,
) -> Union[T, Any]:
    """
    Safely execute a function with error handling.

    Args:
        func: Function to execute
        *args: Arguments to pass to the function
        default: Default value to return on error
        logger: Optional logger instance
        operation_name: Optional operation name for logging
        **kwargs: Keyword arguments to pass to the function

    Returns:
        Function result or default value on error
    """
    op_name = operation_name or f"execution of {func.__name__}"
    log = logger or logging.getLogger(__name__)

    try:
        return func(*args, **kwargs)
    except Exception as e:
        log.warning(f"Safe execution failed for {op_name}: {e}")
        return default


def get_host_description() -> Dict[str, Any]:
    """
    Describe the host the codec runs on.

    Used as the device label of measured latency tables and in benchmark
    reports, so numbers can be traced back to the machine that produced them.

    Returns:
        Dictionary with platform, processor and CPU count details
    """
    host = {
        "system": platform.system(),
        "machine": platform.machine(),
        "processor": platform.processor() or platform.machine(),
        "python_version": platform.python_version(),
        "logical_cpus": os.cpu_count() or 1,
    }

    try:
        import psutil

        host["physical_cpus"] = psutil.cpu_count(logical=False) or host["logical_cpus"]
        host["total_memory"] = psutil.virtual_memory().total
    except Exception:
        host["physical_cpus"] = host["logical_cpus"]

    return host


def device_label() -> str:
    """Short one-line device label, e.g. ``Linux x86_64 (8 cpus)``."""
    host = get_host_description()
    return f"{host['system']} {host['processor']} ({host['logical_cpus']} cpus)"


def setup_logging(log_level: str = "INFO") -> logging.Logger:
    """
    Set up logging configuration for the codec.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)

    Returns:
        Configured logger instance
    """
    level = getattr(logging, log_level.upper(), None)
    if not isinstance(level, int):
        raise DataValidationError(f"Unknown log level: {log_level}")

    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
    )
    return logging.getLogger(__name__)


def format_bytes(bytes_value: int) -> str:
    """
    Format bytes into human-readable format.

    Args:
        bytes_value: Number of bytes

    Returns:
        Formatted string (e.g., "1.5 GB", "512 MB")
    """
    if bytes_value == 0:
        return "0 B"

    size_names = ["B", "KB", "MB", "GB", "TB"]
    i = 0
    value = float(bytes_value)

    while value >= 1024.0 and i < len(size_names) - 1:
        value /= 1024.0
        i += 1

    return f"{value:.1f} {size_names[i]}"


def validate_json_structure(data: Dict[str, Any], required_keys: list) -> bool:
    """
    Validate that a dictionary contains all required keys.

    Args:
        data: Dictionary to validate
        required_keys: List of required keys

    Returns:
        True if all required keys are present

    Raises:
        DataValidationError: If validation fails
    """
    missing_keys = [key for key in required_keys if key not in data]

    if missing_keys:
        raise DataValidationError(f"Missing required keys: {missing_keys}")

    return True


def safe_json_export(data: Any, file_path: Union[str, Path]) -> bool:
    """
    Safely export data to JSON file with error handling.

    Args:
        data: Data to export
        file_path: Path to save JSON file

    Returns:
        True if successful

    Raises:
        FileOperationError: If file operations fail
    """
    try:
        path = Path(file_path)
        path.parent.mkdir(parents=True, exist_ok=True)

        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=JSON_INDENT, ensure_ascii=False, default=str)

        return True

    except Exception as e:
        raise FileOperationError(f"Failed to export JSON to {file_path}: {e}") from e


def load_json_file(file_path: Union[str, Path]) -> Any:
    """
    Load a JSON document, wrapping I/O and parse failures.

    Raises:
        FileOperationError: If the file cannot be read or parsed
    """
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise FileOperationError(f"Failed to read JSON from {file_path}: {e}") from e


def write_bytes_atomic(data: bytes, file_path: Union[str, Path]) -> None:
    """
    Write a binary file through a temporary sibling and rename it into place.

    Raises:
        FileOperationError: If the file cannot be written
    """
    path = Path(file_path)
    tmp_path = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp_path, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except OSError as e:
        raise FileOperationError(f"Failed to write {file_path}: {e}") from e


def read_bytes(file_path: Union[str, Path]) -> bytes:
    """Read a binary file, raising FileOperationError on failure."""
    try:
        with open(file_path, "rb") as f:
            return f.read()
    except OSError as e:
        raise FileOperationError(f"Failed to read {file_path}: {e}") from e


class PerformanceTimer:
    """Context manager for measuring execution time."""

    def __init__(self, operation_name: str, quiet: bool = False):
        """
        Initialize performance timer.

        Args:
            operation_name: Name of the operation being timed
            quiet: Log completion at DEBUG instead of INFO (tight measurement loops)
        """
        self.operation_name = operation_name
        self.quiet = quiet
        self.start_time: Optional[float] = None
        self.end_time: Optional[float] = None
        self.logger = logging.getLogger(__name__)

    def __enter__(self) -> "PerformanceTimer":
        """Start timing."""
        self.start_time = time.perf_counter()
        self.end_time = None
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> bool:
        """End timing and log result."""
        self.end_time = time.perf_counter()

        if self.start_time is not None:
            log_message = f"{self.operation_name} completed in {self.duration * 1000.0:.2f} ms"

            if exc_type is not None:
                self.logger.error(f"{log_message} (failed: {exc_val})")
            elif self.quiet:
                self.logger.debug(log_message)
            else:
                self.logger.info(log_message)

        return False

    @property
    def duration(self) -> float:
        """Get the duration in seconds."""
        if self.start_time is not None:
            if self.end_time is not None:
                return self.end_time - self.start_time
            return time.perf_counter() - self.start_time
        return 0.0

    @property
    def duration_ms(self) -> float:
        """Get the duration in milliseconds."""
        return self.duration * 1000.0


def timed(operation_name: Optional[str] = None) -> Callable:
    """
    Decorator logging the wall time of every call through PerformanceTimer.

    Args:
        operation_name: Label used in the log line (defaults to the function name)
    """

    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> T:
            with PerformanceTimer(operation_name or func.__name__, quiet=True):
                return func(*args, **kwargs)

        return wrapper

    return decorator
