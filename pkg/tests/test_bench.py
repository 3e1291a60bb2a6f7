#!/usr/bin/env python3
"""
Tests for the encode/decode benchmark harness.
"""

import json
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "lic_codec"))

from bench import (
    CSV_COLUMNS,
    MEMORY_UNAVAILABLE,
    BenchError,
    BenchReport,
    BenchSettings,
    MemorySampler,
    PhaseStats,
    bench_run,
    nearest_rank,
)
from image_io import ImageIO, synthetic_raster
from model_store import ChannelConfig, init_weights
from supernet import SubConfig

TINY = ChannelConfig((8, 8, 8, 8), (8, 8, 8), (8, 8, 8), (8, 8, 8, 3))


class TestBenchRun(unittest.TestCase):
    """Test bench_run over a small image directory."""

    @classmethod
    def setUpClass(cls):
        """Write three rasters and build a tiny model."""
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.images = cls.root / "images"
        writer = ImageIO()
        for name, (h, w) in (("a.png", (64, 64)), ("b.bmp", (40, 72)), ("c.png", (33, 20))):
            writer.write_raster(synthetic_raster(h, w, seed=len(name) + h), cls.images / name)
        (cls.images / "notes.txt").write_text("ignored")
        cls.model = init_weights(TINY, seed=3)

    @classmethod
    def tearDownClass(cls):
        """Clean up the scratch directory."""
        cls.tmp.cleanup()

    def test_single_worker_report(self):
        """Test counts, percentiles and throughput keys with one worker."""
        report = bench_run(self.model, self.images, workers=1, warmup=0)
        self.assertEqual(report.image_count, 3)
        self.assertEqual(report.workers, 1)
        self.assertEqual(report.model_id, self.model.model_id)
        self.assertEqual(report.config_label, SubConfig.from_channel_config(TINY).label())
        for phase in ("encode", "decode"):
            stats = report.phase(phase)
            self.assertEqual(len(stats.samples_ms), 3)
            self.assertLessEqual(stats.p50_ms, stats.p99_ms)
            self.assertEqual(set(stats.throughput_fps), {1})
            self.assertGreater(stats.throughput_fps[1], 0.0)
        self.assertEqual(len(report.samples), 6)
        self.assertEqual(sorted(report.payload_digests()), ["a.png", "b.bmp", "c.png"])
        self.assertIn(report.memory_sampling, ("psutil", MEMORY_UNAVAILABLE))
        if report.memory_sampling == "psutil":
            self.assertGreater(report.peak_rss_bytes, 0)

    def test_pooled_workers(self):
        """Test that a pooled run adds a throughput figure for its worker count."""
        report = bench_run(self.model, self.images, workers=2, warmup=1)
        self.assertEqual(set(report.encode.throughput_fps), {1, 2})
        self.assertEqual(set(report.decode.throughput_fps), {1, 2})

    def test_payloads_are_deterministic(self):
        """Test that two runs produce the same payload digests."""
        first = bench_run(self.model, self.images, warmup=0)
        second = bench_run(self.model, self.images, warmup=0)
        self.assertEqual(first.payload_digests(), second.payload_digests())

    def test_quality_fields(self):
        """Test bpp and bytes agree for every sample."""
        report = bench_run(self.model, self.images, warmup=0)
        sizes = {"a.png": 64 * 64, "b.bmp": 40 * 72, "c.png": 33 * 20}
        for sample in report.samples:
            self.assertAlmostEqual(sample.bpp, sample.bytes * 8 / sizes[sample.image])
            self.assertLessEqual(sample.ms_ssim, 1.0 + 1e-9)
            self.assertGreater(sample.psnr, 0.0)

    def test_report_documents(self):
        """Test the dict, JSON, text and CSV forms of a report."""
        report = bench_run(self.model, self.images, warmup=0)
        restored = BenchReport.from_dict(json.loads(json.dumps(report.to_dict())))
        self.assertEqual(restored.to_dict(), report.to_dict())

        text = report.to_text()
        self.assertIn("images=3\n", text)
        self.assertIn(f"model_id={self.model.model_id:016x}\n", text)
        self.assertIn("encode.fps@1=", text)
        self.assertIn("peak_rss_bytes=", text)

        rows = report.to_csv().splitlines()
        self.assertEqual(rows[0], ",".join(CSV_COLUMNS))
        self.assertEqual(len(rows), 7)

        with tempfile.TemporaryDirectory() as tmp:
            for name in ("r.json", "r.csv", "r.txt"):
                report.save(Path(tmp) / name)
            document = json.loads((Path(tmp) / "r.json").read_text())
            self.assertEqual(document["image_count"], 3)
            self.assertEqual((Path(tmp) / "r.csv").read_text(), report.to_csv())
            self.assertEqual((Path(tmp) / "r.txt").read_text(), text)

    def test_settings_and_shorthands_are_exclusive(self):
        """Test that workers or warmup next to settings is refused, and settings alone are honored."""
        settings = BenchSettings(workers=1, warmup=0)
        with self.assertRaises(BenchError):
            bench_run(self.model, self.images, workers=2, settings=settings)
        with self.assertRaises(BenchError):
            bench_run(self.model, self.images, warmup=0, settings=settings)
        self.assertEqual(bench_run(self.model, self.images, settings=settings).workers, 1)

    def test_empty_directory(self):
        """Test that a directory without images is refused."""
        empty = self.root / "empty"
        empty.mkdir(exist_ok=True)
        with self.assertRaises(BenchError):
            bench_run(self.model, empty)


class TestBenchHelpers(unittest.TestCase):
    """Test settings, percentiles and report validation."""

    def test_settings_validation(self):
        """Test worker, warmup and sampling interval bounds."""
        BenchSettings(workers=4, warmup=0)
        with self.assertRaises(BenchError):
            BenchSettings(workers=0)
        with self.assertRaises(BenchError):
            BenchSettings(warmup=-1)
        with self.assertRaises(BenchError):
            BenchSettings(sample_interval_s=0.5)

    def test_nearest_rank(self):
        """Test the nearest-rank percentile."""
        ordered = [float(v) for v in range(1, 101)]
        self.assertEqual(nearest_rank(ordered, 0.50), 50.0)
        self.assertEqual(nearest_rank(ordered, 0.99), 99.0)
        self.assertEqual(nearest_rank([7.0], 0.99), 7.0)
        self.assertEqual(nearest_rank([1.0, 2.0], 0.0), 1.0)
        with self.assertRaises(BenchError):
            nearest_rank([], 0.5)

    def test_phase_stats(self):
        """Test sorting, mean and string throughput keys."""
        stats = PhaseStats.from_samples([3.0, 1.0, 2.0], {1: 10.0, 4: 30.0})
        self.assertEqual(stats.samples_ms, [1.0, 2.0, 3.0])
        self.assertEqual(stats.p50_ms, 2.0)
        self.assertEqual(stats.mean_ms, 2.0)
        self.assertEqual(stats.to_dict()["throughput_fps"], {"1": 10.0, "4": 30.0})
        self.assertEqual(PhaseStats.from_dict(stats.to_dict()), stats)

    def test_malformed_reports(self):
        """Test sample-count mismatches and missing keys."""
        stats = PhaseStats.from_samples([1.0, 2.0], {1: 5.0})
        report = BenchReport("cfg", "float", 1, 2, 1, stats, stats, None, MEMORY_UNAVAILABLE)
        document = report.to_dict()
        self.assertEqual(BenchReport.from_dict(document).image_count, 2)
        document["image_count"] = 3
        with self.assertRaises(BenchError):
            BenchReport.from_dict(document)
        del document["encode"]
        with self.assertRaisesRegex(BenchError, "Missing required keys.*encode"):
            BenchReport.from_dict(document)
        with self.assertRaises(BenchError):
            report.phase("train")

    def test_memory_sampler(self):
        """Test that the sampler reports a peak or nothing."""
        with MemorySampler(0.01) as sampler:
            _ = [bytearray(1024) for _ in range(64)]
        if sampler.peak_rss_bytes is not None:
            self.assertGreater(sampler.peak_rss_bytes, 0)


if __name__ == "__main__":
    unittest.main()
