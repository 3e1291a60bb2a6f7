#!/usr/bin/env python3
"""
Tests for encode_image / decode_image and the LICP container.
"""

import sys
import unittest
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "lic_codec"))

from codec_pipeline import (
    BITSTREAM_MAGIC,
    HEADER_SIZE,
    BitstreamError,
    BitstreamHeader,
    DimensionOverflowError,
    ModelMismatchError,
    analyze_image,
    bitstream_info,
    crop,
    decode_batch,
    decode_image,
    decode_symbols,
    encode_batch,
    encode_image,
    hyper_decode_params,
    latent_shapes,
    pad_replicate,
    symbol_cost_bits,
)
from entropy_coding import default_scale_table, sigma_to_bin
from image_io import raster_to_tensor, synthetic_raster
from model_store import CHANNEL_CONFIGS, ChannelConfig, init_weights
from tensor_core import Tensor
from transforms import hyper_synthesis_int

TINY = ChannelConfig((8, 8, 8, 8), (8, 8, 8), (8, 8, 8), (8, 8, 8, 3))


def image(height: int, width: int, seed: int = 1) -> Tensor:
    return raster_to_tensor(synthetic_raster(height, width, seed))


class TestPadding(unittest.TestCase):
    """Test replicate padding, cropping and the resolution arithmetic."""

    def test_pad_to_next_multiple(self):
        """Test 1920x1080 -> 1920x1088 by edge replication."""
        x = Tensor(np.random.default_rng(0).random((1, 3, 1080, 1920)))
        padded = pad_replicate(x)
        self.assertEqual(padded.dims, (1, 3, 1088, 1920))
        np.testing.assert_array_equal(padded.data[:, :, 1087, :], x.data[:, :, 1079, :])

    def test_aligned_input_unchanged(self):
        """Test that a 64x64 input is returned unchanged."""
        x = image(64, 64)
        self.assertIs(pad_replicate(x), x)

    def test_crop_inverts_pad(self):
        """Test crop(pad(x)) == x on odd sizes."""
        x = image(37, 91)
        restored = crop(pad_replicate(x), 37, 91)
        np.testing.assert_array_equal(restored.data, x.data)

    def test_latent_shapes_1080p(self):
        """Test y and z dims of a 1080p image with the origin config."""
        shapes = latent_shapes(CHANNEL_CONFIGS["origin"], 1080, 1920)
        self.assertEqual(shapes["padded"], (1, 3, 1088, 1920))
        self.assertEqual(shapes["y"], (1, 176, 68, 120))
        self.assertEqual(shapes["z"], (1, 176, 17, 30))


class TestRoundTrip(unittest.TestCase):
    """Test symbol transport and reconstruction on a small model."""

    @classmethod
    def setUpClass(cls):
        """Initialize the model and encode one image."""
        cls.model = init_weights(TINY, seed=7)
        cls.x = image(70, 50)
        cls.data = encode_image(cls.x, cls.model)

    def test_symbols_lossless(self):
        """Test that decoded z_hat and residuals equal the encoder's."""
        symbols = analyze_image(self.x, self.model)
        decoded = decode_symbols(self.data, self.model)
        np.testing.assert_array_equal(decoded.z_hat, symbols.z_hat)
        np.testing.assert_array_equal(decoded.residual, symbols.residual)
        np.testing.assert_array_equal(decoded.params.sigma_bins, symbols.params.sigma_bins)

    def test_decode_shape_and_range(self):
        """Test the cropped, clamped reconstruction."""
        x_hat = decode_image(self.data, self.model)
        self.assertEqual(x_hat.dims, (1, 3, 70, 50))
        self.assertGreaterEqual(float(x_hat.data.min()), 0.0)
        self.assertLessEqual(float(x_hat.data.max()), 1.0)

    def test_decode_is_deterministic(self):
        """Test that two decodes are byte-identical."""
        a = decode_image(self.data, self.model)
        b = decode_image(self.data, self.model)
        self.assertEqual(a.data.tobytes(), b.data.tobytes())

    def test_encode_is_deterministic(self):
        """Test that two encodes are byte-identical."""
        self.assertEqual(encode_image(self.x, self.model), self.data)

    def test_header_fields(self):
        """Test magic, dims, model id and exact length accounting."""
        header = BitstreamHeader.unpack(self.data)
        self.assertEqual(self.data[:4], BITSTREAM_MAGIC)
        self.assertEqual((header.width, header.height), (50, 70))
        self.assertEqual(header.model_id, self.model.model_id)
        self.assertEqual(header.total_size, len(self.data))
        self.assertEqual(header.bypass_len % 2, 0)
        info = bitstream_info(self.data)
        self.assertEqual(info["total_bytes"], len(self.data))
        self.assertAlmostEqual(info["bpp"], 8.0 * len(self.data) / (70 * 50))
        self.assertEqual(info["quant_mode"], "float")

    def test_rate_near_symbol_entropy(self):
        """Test coded z and y lengths against the ideal code length."""
        x = image(256, 256, seed=3)
        symbols = analyze_image(x, self.model)
        data = encode_image(x, self.model)
        header = BitstreamHeader.unpack(data)
        bits = symbol_cost_bits(symbols, self.model)
        coded = 8 * (header.z_stream_len + header.y_stream_len)
        self.assertLessEqual(coded, bits * 1.01 + 64 * 8)
        self.assertGreaterEqual(coded, bits - 16)

    def test_batch_matches_single_across_workers(self):
        """Test that pooled encode and decode match the sequential results."""
        images = [image(64, 64, seed=s) for s in range(4)]
        single = [encode_image(img, self.model) for img in images]
        self.assertEqual(encode_batch(images, self.model, workers=3), single)
        sequential = decode_batch(single, self.model, workers=1)
        pooled = decode_batch(single, self.model, workers=4)
        for a, b in zip(sequential, pooled):
            self.assertEqual(a.data.tobytes(), b.data.tobytes())

    def test_one_pixel_image(self):
        """Test the smallest legal input."""
        x = image(1, 1)
        x_hat = decode_image(encode_image(x, self.model), self.model)
        self.assertEqual(x_hat.dims, (1, 3, 1, 1))


class TestHyperDecoder(unittest.TestCase):
    """Test the integer hyper decoder contract."""

    @classmethod
    def setUpClass(cls):
        """Initialize the model."""
        cls.model = init_weights(TINY, seed=11)

    def test_all_zero_latent(self):
        """Test that a zero hyper-latent gives the same parameters for every batch entry and call."""
        params = hyper_decode_params(np.zeros((2, 8, 2, 2), dtype=np.int64), self.model)
        self.assertEqual(params.mu.shape, (2, 8, 8, 8))
        np.testing.assert_array_equal(params.mu_int[0], params.mu_int[1])
        again = hyper_decode_params(np.zeros((1, 8, 2, 2), dtype=np.int64), self.model)
        np.testing.assert_array_equal(again.mu_int[0], params.mu_int[0])
        np.testing.assert_array_equal(again.sigma_bins[0], params.sigma_bins[0])

    def test_mu_is_integer_times_step(self):
        """Test mu = mu_int * s_mu exactly."""
        z = np.random.default_rng(4).integers(-5, 6, size=(1, 8, 3, 3))
        params = hyper_decode_params(z, self.model)
        np.testing.assert_array_equal(params.mu, params.mu_int.astype(np.float64) * self.model.mu_scale)

    def test_out_of_range_hyper_latent_is_clipped(self):
        """Test that z_hat beyond int8 reaches h_s saturated, with a debug message."""
        z = np.random.default_rng(6).integers(-5, 6, size=(1, 8, 2, 2))
        z[0, 0, 0, 0], z[0, 3, 1, 1] = 300, -1000
        with self.assertLogs("transforms", level="DEBUG") as logs:
            wide = hyper_synthesis_int(self.model, z)
        self.assertTrue(any("2 z_hat values outside int8" in line for line in logs.output))
        np.testing.assert_array_equal(wide, hyper_synthesis_int(self.model, np.clip(z, -128, 127)))

    def test_threshold_lookup_matches_sigma_bins(self):
        """Test the integer threshold count at every boundary +-1."""
        thresholds = self.model.sigma_thresholds
        probes = np.unique(np.concatenate([thresholds - 1, thresholds, thresholds + 1, [0, 10**7]]))
        bins = np.searchsorted(thresholds, probes, side="left")
        self.assertTrue((np.diff(bins) >= 0).all())
        expected = sigma_to_bin(probes.astype(np.float64) * self.model.sigma_scale, default_scale_table())
        np.testing.assert_array_equal(bins, expected)


class TestContainerErrors(unittest.TestCase):
    """Test rejection of damaged or foreign containers."""

    @classmethod
    def setUpClass(cls):
        """Encode one image with a small model."""
        cls.model = init_weights(TINY, seed=7)
        cls.data = encode_image(image(64, 64), cls.model)

    def test_model_mismatch(self):
        """Test that another model refuses the stream."""
        other = init_weights(TINY, seed=8)
        with self.assertRaises(ModelMismatchError):
            decode_image(self.data, other)

    def test_bad_magic_and_version(self):
        """Test header validation before decoding."""
        with self.assertRaises(BitstreamError):
            decode_image(b"LICX" + self.data[4:], self.model)
        with self.assertRaises(BitstreamError):
            decode_image(self.data[:4] + b"\x07" + self.data[5:], self.model)
        with self.assertRaises(BitstreamError):
            decode_image(self.data[:5] + b"\x80" + self.data[6:], self.model)

    def test_length_accounting(self):
        """Test that truncated and padded containers are refused."""
        with self.assertRaises(BitstreamError):
            decode_image(self.data[:-1], self.model)
        with self.assertRaises(BitstreamError):
            decode_image(self.data + b"\x00", self.model)
        with self.assertRaises(BitstreamError):
            decode_image(self.data[: HEADER_SIZE - 1], self.model)

    def test_dimension_overflow(self):
        """Test that header fields beyond 32 bits raise."""
        with self.assertRaises(DimensionOverflowError):
            BitstreamHeader(2**32, 1, 0, 0, 0, 0).pack()

    def test_bad_input_shape(self):
        """Test that non-RGB input is refused."""
        from tensor_core import ShapeMismatchError

        with self.assertRaises(ShapeMismatchError):
            encode_image(Tensor(np.zeros((1, 1, 64, 64))), self.model)


class TestDegenerateModel(unittest.TestCase):
    """Test a model with all weights zero."""

    def test_zero_weights_reproducible(self):
        """Test that the bias-only model decodes identically across runs."""
        model = init_weights(TINY, seed=3, weight_scale=0.0)
        x = image(64, 64)
        data = encode_image(x, model)
        self.assertEqual(encode_image(image(64, 64, seed=9), model), data)
        a = decode_image(data, model)
        b = decode_image(data, model)
        self.assertEqual(a.data.tobytes(), b.data.tobytes())


@pytest.mark.slow
class TestLosslessSweep(unittest.TestCase):
    """Test symbol transport on many seeds and image sizes."""

    def test_sweep(self):
        """Test 100 random (seed, image) pairs across two configs."""
        configs = [TINY, ChannelConfig((8, 12, 8, 6), (10, 8, 4), (8, 12, 6), (6, 8, 4, 3))]
        rng = np.random.default_rng(99)
        models = {cfg: init_weights(cfg, seed=int(rng.integers(1000))) for cfg in configs}
        for case in range(100):
            cfg = configs[case % 2]
            h, w = (int(v) for v in rng.integers(1, 130, size=2))
            x = image(h, w, seed=case)
            data = encode_image(x, models[cfg])
            symbols = analyze_image(x, models[cfg])
            decoded = decode_symbols(data, models[cfg])
            np.testing.assert_array_equal(decoded.z_hat, symbols.z_hat)
            np.testing.assert_array_equal(decoded.residual, symbols.residual)


if __name__ == "__main__":
    unittest.main()
