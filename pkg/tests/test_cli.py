#!/usr/bin/env python3
"""
Tests for the lic-codec command-line interface.
"""

import contextlib
import io
import json
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "lic_codec"))

from cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, CliConfig, CliError, main
from codec_pipeline import decode_image, encode_image
from image_io import ImageIO, load_image, synthetic_raster, tensor_to_raster
from latency_table import LatencyKey, LatencyTable
from model_store import ChannelConfig, load_weights
from supernet import SearchSpace

TINY = ChannelConfig((8, 8, 8, 8), (8, 8, 8), (8, 8, 8), (8, 8, 8, 3))


def run_cli(*argv: str):
    """Run main() and return (exit code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


class TestCliCommands(unittest.TestCase):
    """Test the commands against the library operations they wrap."""

    def setUp(self):
        """Write a tiny channel config, weights and one image."""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.config_path = self.root / "tiny.json"
        self.config_path.write_text(json.dumps(TINY.to_dict()))
        self.model_path = self.root / "tiny.licw"
        code, _, err = run_cli("init", "--config", self.config_path, "--seed", "7", "--output", self.model_path)
        self.assertEqual(code, EXIT_OK, err)
        self.raster = synthetic_raster(32, 48, seed=4)
        self.image_path = self.root / "images" / "img.png"
        ImageIO().write_raster(self.raster, self.image_path)

    def tearDown(self):
        """Clean up the scratch directory."""
        self.tmp.cleanup()

    def test_init_is_deterministic(self):
        """Test that the same config and seed write identical files."""
        again = self.root / "again.licw"
        other = self.root / "other.licw"
        self.assertEqual(run_cli("init", "--config", self.config_path, "--seed", "7", "--output", again)[0], EXIT_OK)
        self.assertEqual(run_cli("init", "--config", self.config_path, "--seed", "8", "--output", other)[0], EXIT_OK)
        self.assertEqual(again.read_bytes(), self.model_path.read_bytes())
        self.assertNotEqual(other.read_bytes(), self.model_path.read_bytes())
        self.assertEqual(load_weights(self.model_path).config, TINY)

    def test_encode_decode_match_library(self):
        """Test that the CLI writes the same bytes and pixels as the library calls."""
        stream_path = self.root / "img.licp"
        decoded_path = self.root / "decoded.png"
        code, out, _ = run_cli(
            "encode", "--model", self.model_path, "--input", self.image_path, "--output", stream_path
        )
        self.assertEqual(code, EXIT_OK)
        self.assertIn("bpp", out)
        model = load_weights(self.model_path)
        expected = encode_image(load_image(self.image_path), model)
        self.assertEqual(stream_path.read_bytes(), expected)

        code, _, _ = run_cli("decode", "--model", self.model_path, "--input", stream_path, "--output", decoded_path)
        self.assertEqual(code, EXIT_OK)
        np.testing.assert_array_equal(
            ImageIO().read_raster(decoded_path), tensor_to_raster(decode_image(expected, model))
        )

    def test_info(self):
        """Test the bitstream and weight file descriptions."""
        stream_path = self.root / "img.licp"
        run_cli("encode", "--model", self.model_path, "--input", self.image_path, "--output", stream_path)
        json_path = self.root / "info.json"
        code, out, _ = run_cli("info", "--input", stream_path, "--json", json_path)
        self.assertEqual(code, EXIT_OK)
        self.assertIn("width: 48", out)
        self.assertIn("height: 32", out)
        self.assertIn("bpp: ", out)
        self.assertEqual(json.loads(json_path.read_text())["kind"], "bitstream")

        code, out, _ = run_cli("info", "--input", self.model_path)
        self.assertEqual(code, EXIT_OK)
        self.assertIn("kind: weights", out)
        self.assertIn(f"model_id: {load_weights(self.model_path).model_id:016x}", out)

    def test_calibrate(self):
        """Test hs-int conversion from an image directory and float without images."""
        converted = self.root / "hs.licw"
        args = ("calibrate", "--model", self.model_path, "--images", self.image_path.parent, "--output", converted)
        self.assertEqual(run_cli(*args)[0], EXIT_OK)
        self.assertEqual(load_weights(converted).quant_mode, "hs-int")

        float_path = self.root / "float.licw"
        code, _, _ = run_cli(
            "calibrate", "--model", self.model_path, "--quant-mode", "float", "--output", float_path
        )
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(float_path.read_bytes(), self.model_path.read_bytes())

        code, _, err = run_cli("calibrate", "--model", self.model_path, "--output", converted)
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("--images", err)

    def test_bench(self):
        """Test the text summary and the JSON report."""
        report = self.root / "bench.json"
        code, out, _ = run_cli(
            "bench", "--model", self.model_path, "--images", self.image_path.parent, "--warmup", "0", "--report", report
        )
        self.assertEqual(code, EXIT_OK)
        self.assertIn("images=1\n", out)
        self.assertEqual(json.loads(report.read_text())["image_count"], 1)

    def test_measure_lut(self):
        """Test measuring one explicit shape."""
        lut = self.root / "one.lut"
        code, _, _ = run_cli("measure-lut", "--shape", "conv,3,4,3,1,8,8", "--output", lut)
        self.assertEqual(code, EXIT_OK)
        self.assertGreater(LatencyTable.load(lut).lookup(LatencyKey("conv", 3, 4, 3, 1, 8, 8)), 0.0)

    def test_search(self):
        """Test a FLOP-scored search over a small space file."""
        layers = [(4,)] * 12 + [(3,)]
        layers[0] = (4, 8)
        space = SearchSpace(tuple(layers), "two")
        space_path = self.root / "space.json"
        space_path.write_text(json.dumps(space.to_dict()))
        result_path = self.root / "search.json"
        code, out, _ = run_cli(
            "search", "--space", space_path, "--input-size", "64x64", "--scorer", "flops", "--output", result_path
        )
        self.assertEqual(code, EXIT_OK)
        self.assertIn(f"best={space.min_config().label()}", out)
        self.assertEqual(json.loads(result_path.read_text())["best_label"], space.min_config().label())


class TestCliErrors(unittest.TestCase):
    """Test exit codes and the one-line error format."""

    def test_unknown_flag(self):
        """Test that a bad flag exits 2 with one error line."""
        code, out, err = run_cli("encode", "--bogus")
        self.assertEqual(code, EXIT_USAGE)
        self.assertEqual(out, "")
        self.assertTrue(err.startswith("error: CliError: "))
        self.assertEqual(len(err.strip().splitlines()), 1)

    def test_missing_command_and_bad_choice(self):
        """Test a missing subcommand and an invalid choice."""
        self.assertEqual(run_cli()[0], EXIT_USAGE)
        self.assertEqual(run_cli("calibrate", "--model", "m", "--output", "o", "--quant-mode", "int4")[0], EXIT_USAGE)

    def test_runtime_failure(self):
        """Test that a missing model file exits 1."""
        with tempfile.TemporaryDirectory() as tmp:
            code, _, err = run_cli(
                "encode", "--model", Path(tmp) / "none.licw", "--input", "x.png", "--output", Path(tmp) / "y"
            )
        self.assertEqual(code, EXIT_RUNTIME)
        self.assertTrue(err.startswith("error: "))
        self.assertEqual(len(err.strip().splitlines()), 1)

    def test_latency_scorer_needs_table(self):
        """Test that --scorer latency without a table is a usage error."""
        code, _, err = run_cli("search", "--space", "paired", "--scorer", "latency")
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("--lut", err)

    def test_bad_size(self):
        """Test that a malformed --input-size is a usage error."""
        self.assertEqual(run_cli("search", "--input-size", "64by64")[0], EXIT_USAGE)

    def test_cli_config_validation(self):
        """Test the shared option checks."""
        with self.assertRaises(CliError):
            CliConfig(workers=0)
        with self.assertRaises(CliError):
            CliConfig(config_name="no-such-config")
        with self.assertRaises(CliError):
            CliConfig().load_model()
        self.assertEqual(CliConfig(config_name="nas").config_name, "nas")


if __name__ == "__main__":
    unittest.main()
