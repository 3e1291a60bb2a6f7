#!/usr/bin/env python3
"""
Tests for raster import/export and the float mapping.
"""

import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "lic_codec"))

from image_io import (
    ImageIO,
    ImageProcessingError,
    ImageValidationError,
    load_image,
    raster_digest,
    raster_to_tensor,
    save_image,
    synthetic_raster,
    tensor_to_raster,
)
from tensor_core import Tensor


class TestImageIO(unittest.TestCase):
    """Test ImageIO validation and file round trips."""

    def setUp(self):
        """Set up a scratch directory and a raster."""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.io = ImageIO()
        self.raster = synthetic_raster(33, 47, seed=5)

    def tearDown(self):
        """Clean up the scratch directory."""
        self.tmp.cleanup()

    def test_png_and_bmp_lossless(self):
        """Test that both containers return the exact pixels."""
        for name in ("a.png", "b.bmp"):
            path = self.root / name
            self.io.write_raster(self.raster, path)
            np.testing.assert_array_equal(self.io.read_raster(path), self.raster)

    def test_validate_reports_info(self):
        """Test the RasterInfo of a written file."""
        path = self.root / "info.png"
        self.io.write_raster(self.raster, path)
        info = self.io.validate(path)
        self.assertEqual((info.width, info.height), (47, 33))
        self.assertEqual(info.format_name, "png")
        self.assertFalse(info.has_alpha)

    def test_alpha_dropped(self):
        """Test that RGBA input is read as RGB."""
        rgba = np.dstack([self.raster, np.full(self.raster.shape[:2], 128, dtype=np.uint8)])
        path = self.root / "alpha.png"
        PILImage.fromarray(rgba).save(path)
        self.assertTrue(self.io.validate(path).has_alpha)
        np.testing.assert_array_equal(self.io.read_raster(path), self.raster)

    def test_validation_failures(self):
        """Test missing, empty, unsupported and corrupt files."""
        with self.assertRaises(ImageValidationError):
            self.io.validate(self.root / "missing.png")
        empty = self.root / "empty.png"
        empty.write_bytes(b"")
        with self.assertRaises(ImageValidationError):
            self.io.validate(empty)
        jpeg = self.root / "photo.jpg"
        jpeg.write_bytes(b"\xff\xd8\xff")
        with self.assertRaises(ImageValidationError):
            self.io.validate(jpeg)
        corrupt = self.root / "corrupt.png"
        corrupt.write_bytes(b"not a png at all")
        with self.assertRaises(ImageValidationError):
            self.io.validate(corrupt)

    def test_size_limit(self):
        """Test the max_file_size check."""
        path = self.root / "big.png"
        self.io.write_raster(self.raster, path)
        with self.assertRaises(ImageValidationError):
            ImageIO(max_file_size=10).validate(path)

    def test_write_rejects_bad_rasters(self):
        """Test shape and dtype checks on export."""
        with self.assertRaises(ImageProcessingError):
            self.io.write_raster(self.raster.astype(np.float32), self.root / "f.png")
        with self.assertRaises(ImageProcessingError):
            self.io.write_raster(self.raster[..., 0], self.root / "g.png")

    def test_list_images(self):
        """Test that only supported files are listed, sorted by name."""
        for name in ("c.png", "a.bmp", "b.txt"):
            (self.root / name).write_bytes(b"x")
        self.assertEqual([p.name for p in self.io.list_images(self.root)], ["a.bmp", "c.png"])
        with self.assertRaises(ImageValidationError):
            self.io.list_images(self.root / "nowhere")


class TestTensorMapping(unittest.TestCase):
    """Test the v / 255 mapping."""

    def test_raster_tensor_round_trip(self):
        """Test that every 8-bit value survives raster -> tensor -> raster."""
        raster = np.arange(256, dtype=np.uint8).reshape(16, 16, 1).repeat(3, axis=2)
        x = raster_to_tensor(raster)
        self.assertEqual(x.dims, (1, 3, 16, 16))
        self.assertAlmostEqual(float(x.data.max()), 1.0)
        np.testing.assert_array_equal(tensor_to_raster(x), raster)

    def test_rounding_and_clamp(self):
        """Test rounding and clamping on export."""
        data = np.zeros((1, 3, 1, 3))
        data[0, :, 0, 0] = 0.6 / 255.0
        data[0, :, 0, 1] = 1.2
        data[0, :, 0, 2] = -0.3
        raster = tensor_to_raster(Tensor(data))
        self.assertEqual(raster[0, 0, 0], 1)
        self.assertEqual(raster[0, 1, 0], 255)
        self.assertEqual(raster[0, 2, 0], 0)

    def test_file_helpers(self):
        """Test save_image / load_image and the digest."""
        raster = synthetic_raster(20, 30, seed=2)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "x.png"
            written = save_image(raster_to_tensor(raster), path)
            self.assertEqual(raster_digest(written), raster_digest(raster))
            np.testing.assert_array_equal(tensor_to_raster(load_image(path)), raster)

    def test_synthetic_raster_deterministic(self):
        """Test that the same seed gives the same raster."""
        self.assertEqual(raster_digest(synthetic_raster(9, 9, 1)), raster_digest(synthetic_raster(9, 9, 1)))
        self.assertNotEqual(raster_digest(synthetic_raster(9, 9, 1)), raster_digest(synthetic_raster(9, 9, 2)))


if __name__ == "__main__":
    unittest.main()
