#!/usr/bin/env python3
"""
Tests for PSNR, MS-SSIM, bpp and the hybrid score.
"""

import math
import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "lic_codec"))

from metrics import (
    PSNR_CAP_DB,
    MetricError,
    bpp,
    gaussian_window,
    hybrid_score,
    ms_ssim,
    mse,
    psnr,
    quality_report,
    scale_count,
)


def random_raster(seed: int, height: int = 96, width: int = 96) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, size=(height, width, 3), dtype=np.uint8)


class TestPsnr(unittest.TestCase):
    """Test PSNR closed forms and properties."""

    def test_identical_is_capped(self):
        """Test the cap for identical inputs."""
        a = random_raster(1)
        self.assertEqual(psnr(a, a), PSNR_CAP_DB)

    def test_unit_difference(self):
        """Test MSE 1 -> 20*log10(255)."""
        a = np.full((8, 8, 3), 100, dtype=np.uint8)
        self.assertAlmostEqual(psnr(a, a + 1), 48.1308036, places=6)
        self.assertAlmostEqual(psnr(a, a + 1), 20 * math.log10(255), places=12)

    def test_full_scale_difference(self):
        """Test a 255 difference on every pixel -> 0 dB."""
        a = np.zeros((4, 4, 3), dtype=np.uint8)
        b = np.full((4, 4, 3), 255, dtype=np.uint8)
        self.assertAlmostEqual(psnr(a, b), 0.0, places=12)

    def test_symmetry_and_monotonicity(self):
        """Test symmetry and strictly falling PSNR as the error grows."""
        base = np.full((32, 32, 3), 128, dtype=np.int64)
        signs = np.where(np.indices((32, 32, 3)).sum(axis=0) % 2 == 0, 1, -1)
        values = []
        for amplitude in (1, 4, 16, 64):
            noisy = (base + amplitude * signs).astype(np.uint8)
            self.assertEqual(psnr(base.astype(np.uint8), noisy), psnr(noisy, base.astype(np.uint8)))
            values.append(psnr(base.astype(np.uint8), noisy))
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_dimension_mismatch(self):
        """Test shape checks."""
        with self.assertRaises(MetricError):
            psnr(random_raster(1, 8, 8), random_raster(1, 8, 9))
        with self.assertRaises(MetricError):
            mse(np.zeros((0, 3)), np.zeros((0, 3)))


class TestMsSsim(unittest.TestCase):
    """Test MS-SSIM."""

    def test_identity(self):
        """Test that identical images score 1."""
        a = random_raster(2, 200, 200)
        self.assertAlmostEqual(ms_ssim(a, a), 1.0, delta=1e-9)

    def test_symmetry(self):
        """Test ms_ssim(a, b) == ms_ssim(b, a)."""
        a, b = random_raster(3), random_raster(4)
        self.assertAlmostEqual(ms_ssim(a, b), ms_ssim(b, a), delta=1e-9)

    def test_ordering(self):
        """Test that a gray replacement scores below a one-pixel perturbation."""
        a = random_raster(5)
        gray = np.full_like(a, 128)
        perturbed = a.copy()
        perturbed[10, 10, 0] ^= 0x01
        near = ms_ssim(a, perturbed)
        self.assertLess(ms_ssim(a, gray), near)
        self.assertLess(near, 1.0)
        self.assertGreater(ms_ssim(a, gray), -1.0)

    def test_scale_count(self):
        """Test the scale thresholds and the shrunken window for tiny inputs."""
        self.assertEqual(scale_count(176, 176), 5)
        self.assertEqual(scale_count(175, 400), 4)
        self.assertEqual(scale_count(64, 64), 3)
        self.assertEqual(scale_count(10, 10), 1)
        tiny = random_raster(6, 8, 8)
        self.assertAlmostEqual(ms_ssim(tiny, tiny), 1.0, delta=1e-9)

    def test_gaussian_window(self):
        """Test normalization and symmetry of the window."""
        window = gaussian_window()
        self.assertEqual(window.shape, (11, 11))
        self.assertAlmostEqual(float(window.sum()), 1.0)
        np.testing.assert_allclose(window, window.T)

    def test_grayscale_input(self):
        """Test a two-dimensional raster."""
        a = random_raster(7)[..., 0]
        self.assertAlmostEqual(ms_ssim(a, a), 1.0, delta=1e-9)


class TestRateAndHybrid(unittest.TestCase):
    """Test bpp and the hybrid score."""

    def test_bpp(self):
        """Test arithmetic, zero bytes and linearity."""
        self.assertAlmostEqual(bpp(1000, 100, 100), 0.8)
        self.assertEqual(bpp(0, 100, 100), 0.0)
        self.assertAlmostEqual(bpp(2000, 64, 48), 2 * bpp(1000, 64, 48))
        with self.assertRaises(MetricError):
            bpp(10, 0, 100)
        with self.assertRaises(MetricError):
            bpp(-1, 10, 10)

    def test_hybrid_endpoints(self):
        """Test identical inputs and both weight endpoints."""
        a, b = random_raster(8), random_raster(9)
        self.assertAlmostEqual(hybrid_score(a, a), 0.0, delta=1e-9)
        self.assertAlmostEqual(hybrid_score(a, b, 0.0), mse(a, b) / 255.0**2)
        self.assertAlmostEqual(hybrid_score(a, b, 1.0), 1.0 - ms_ssim(a, b))
        with self.assertRaises(MetricError):
            hybrid_score(a, b, 1.5)

    def test_quality_report(self):
        """Test the combined report."""
        a = random_raster(10, 40, 50)
        report = quality_report(a, a, 250)
        self.assertEqual(report["psnr"], PSNR_CAP_DB)
        self.assertAlmostEqual(report["bpp"], 1.0)
        self.assertAlmostEqual(report["ms_ssim"], 1.0, delta=1e-9)


if __name__ == "__main__":
    unittest.main()
