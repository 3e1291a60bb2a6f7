#!/usr/bin/env python3
"""
Tests for shared helpers: errors, logging, timing and file I/O.
"""

import logging
import sys
import tempfile
import time
import unittest
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "lic_codec"))

from utils import (
    DataValidationError,
    ErrorHandler,
    FileOperationError,
    LicCodecError,
    PerformanceTimer,
    device_label,
    format_bytes,
    get_host_description,
    load_json_file,
    read_bytes,
    safe_execute,
    safe_json_export,
    setup_logging,
    timed,
    validate_json_structure,
    write_bytes_atomic,
)


class TestErrors(unittest.TestCase):
    """Test the exception hierarchy and error helpers."""

    def test_hierarchy(self):
        """Test that codec errors share one root."""
        self.assertTrue(issubclass(DataValidationError, LicCodecError))
        self.assertTrue(issubclass(FileOperationError, LicCodecError))

    def test_error_handler_suppresses(self):
        """Test suppression, the default value and the callback."""
        seen = []
        with ErrorHandler("divide", suppress_exceptions=True, default_return=-1, error_callback=seen.append) as h:
            1 / 0
        self.assertTrue(h.exception_occurred)
        self.assertEqual(h.get_result(5), -1)
        self.assertIsInstance(seen[0], ZeroDivisionError)

    def test_error_handler_reraises(self):
        """Test that errors propagate unless suppressed."""
        with self.assertRaises(ValueError):
            with ErrorHandler("parse"):
                int("x")
        with ErrorHandler("noop") as h:
            pass
        self.assertEqual(h.get_result(3), 3)

    def test_safe_execute(self):
        """Test the result and the default on failure."""
        self.assertEqual(safe_execute(int, "12"), 12)
        self.assertEqual(safe_execute(int, "twelve", default=0), 0)

    def test_validate_json_structure(self):
        """Test missing keys."""
        self.assertTrue(validate_json_structure({"a": 1, "b": 2}, ["a"]))
        with self.assertRaises(DataValidationError):
            validate_json_structure({"a": 1}, ["a", "b"])


class TestFiles(unittest.TestCase):
    """Test JSON and binary file helpers."""

    def test_json_round_trip(self):
        """Test export and load, including parent creation."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "nested" / "doc.json"
            self.assertTrue(safe_json_export({"x": [1, 2], "p": Path("a")}, path))
            self.assertEqual(load_json_file(path), {"x": [1, 2], "p": "a"})
            self.assertIn('\n  "x": [', path.read_text())
            path.write_text("{broken")
            with self.assertRaises(FileOperationError):
                load_json_file(path)
            with self.assertRaises(FileOperationError):
                load_json_file(Path(tmp) / "missing.json")

    def test_atomic_bytes(self):
        """Test that the temporary sibling is gone after a write."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "out" / "blob.bin"
            write_bytes_atomic(b"\x00\x01", path)
            write_bytes_atomic(b"\x02", path)
            self.assertEqual(read_bytes(path), b"\x02")
            self.assertEqual([p.name for p in path.parent.iterdir()], ["blob.bin"])
            with self.assertRaises(FileOperationError):
                read_bytes(Path(tmp) / "missing.bin")

    def test_format_bytes(self):
        """Test byte formatting."""
        self.assertEqual(format_bytes(0), "0 B")
        self.assertEqual(format_bytes(512), "512.0 B")
        self.assertEqual(format_bytes(1536), "1.5 KB")
        self.assertEqual(format_bytes(1024**3), "1.0 GB")


class TestRuntime(unittest.TestCase):
    """Test host description, logging setup and timers."""

    def test_host_description(self):
        """Test the fields used in reports and table labels."""
        host = get_host_description()
        for key in ("system", "machine", "processor", "logical_cpus", "physical_cpus"):
            self.assertIn(key, host)
        self.assertGreaterEqual(host["logical_cpus"], 1)
        self.assertIn("cpus)", device_label())

    def test_setup_logging(self):
        """Test level names and rejection of unknown ones."""
        self.assertIsInstance(setup_logging("debug"), logging.Logger)
        with self.assertRaises(DataValidationError):
            setup_logging("LOUD")

    def test_performance_timer(self):
        """Test that elapsed time is recorded."""
        with PerformanceTimer("sleep", quiet=True) as timer:
            time.sleep(0.01)
        self.assertGreaterEqual(timer.duration, 0.01)
        self.assertAlmostEqual(timer.duration_ms, timer.duration * 1000.0)
        self.assertEqual(PerformanceTimer("idle").duration, 0.0)

    def test_timed_decorator(self):
        """Test that the wrapped function keeps its name and result."""

        @timed("square")
        def square(v):
            return v * v

        self.assertEqual(square(4), 16)
        self.assertEqual(square.__name__, "square")


if __name__ == "__main__":
    unittest.main()
