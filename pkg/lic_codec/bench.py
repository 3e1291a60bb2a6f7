"""
Benchmark harness for the codec.

Runs every image of a directory through encode and decode twice: a
single-stream latency pass whose timings include file read and raster
conversion, then a pooled throughput pass at the requested worker count.
Resident memory is sampled in the background with psutil. Reports are
written as JSON, CSV (phase,image,bytes,ms,psnr,ms_ssim,bpp) or
line-oriented key=value text.
"""

import csv
import hashlib
import io
import logging
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import psutil

from codec_pipeline import decode_image, encode_image
from image_io import ImageIO, raster_to_tensor, tensor_to_raster
from metrics import bpp, ms_ssim, psnr
from model_store import ModelWeights
from supernet import SubConfig
from utils import (
    DataValidationError,
    ErrorHandler,
    LicCodecError,
    get_host_description,
    safe_execute,
    safe_json_export,
    validate_json_structure,
    write_bytes_atomic,
)

logger = logging.getLogger(__name__)

PHASES = ("encode", "decode")
CSV_COLUMNS = ["phase", "image", "bytes", "ms", "psnr", "ms_ssim", "bpp"]
MEMORY_SAMPLE_INTERVAL_S = 0.05
MEMORY_UNAVAILABLE = "unavailable"
REPORT_KEYS = [
    "config_label",
    "quant_mode",
    "model_id",
    "image_count",
    "workers",
    "encode",
    "decode",
    "peak_rss_bytes",
    "memory_sampling",
]


class BenchError(LicCodecError):
    """Raised when a benchmark cannot run or its report is malformed."""

    pass


@dataclass(frozen=True)
class BenchSettings:
    workers: int = 1
    warmup: int = 1
    sample_interval_s: float = MEMORY_SAMPLE_INTERVAL_S

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise BenchError(f"workers must be >= 1, got {self.workers}")
        if self.warmup < 0:
            raise BenchError(f"warmup must be >= 0, got {self.warmup}")
        if not 0 < self.sample_interval_s <= 0.1:
            raise BenchError(f"memory sampling needs at least 10 Hz, got {self.sample_interval_s}s")


@dataclass
class ImageSample:
    phase: str
    image: str
    bytes: int
    ms: float
    psnr: float
    ms_ssim: float
    bpp: float
    sha256: str


@dataclass
class PhaseStats:
    samples_ms: List[float]
    p50_ms: float
    p99_ms: float
    mean_ms: float
    throughput_fps: Dict[int, float]

    @classmethod
    def from_samples(cls, samples_ms: Sequence[float], throughput_fps: Mapping[int, float]) -> "PhaseStats":
        ordered = sorted(samples_ms)
        return cls(
            ordered,
            nearest_rank(ordered, 0.50),
            nearest_rank(ordered, 0.99),
            statistics.fmean(ordered),
            dict(throughput_fps),
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["throughput_fps"] = {str(k): v for k, v in self.throughput_fps.items()}
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PhaseStats":
        return cls(
            [float(v) for v in data["samples_ms"]],
            float(data["p50_ms"]),
            float(data["p99_ms"]),
            float(data["mean_ms"]),
            {int(k): float(v) for k, v in data["throughput_fps"].items()},
        )


@dataclass
class BenchReport:
    config_label: str
    quant_mode: str
    model_id: int
    image_count: int
    workers: int
    encode: PhaseStats
    decode: PhaseStats
    peak_rss_bytes: Optional[int]
    memory_sampling: str
    samples: List[ImageSample] = field(default_factory=list)
    host: Dict[str, Any] = field(default_factory=dict)
    timestamp: str = ""

    def validate(self) -> None:
        for phase in PHASES:
            stats = self.phase(phase)
            if len(stats.samples_ms) != self.image_count:
                raise BenchError(f"{phase}: {len(stats.samples_ms)} samples for {self.image_count} images")
            if stats.p50_ms > stats.p99_ms:
                raise BenchError(f"{phase}: p50 {stats.p50_ms} exceeds p99 {stats.p99_ms}")

    def phase(self, name: str) -> PhaseStats:
        if name not in PHASES:
            raise BenchError(f"unknown phase {name!r}")
        return self.encode if name == "encode" else self.decode

    def payload_digests(self) -> Dict[str, str]:
        return {s.image: s.sha256 for s in self.samples if s.phase == "encode"}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_label": self.config_label,
            "quant_mode": self.quant_mode,
            "model_id": self.model_id,
            "image_count": self.image_count,
            "workers": self.workers,
            "encode": self.encode.to_dict(),
            "decode": self.decode.to_dict(),
            "peak_rss_bytes": self.peak_rss_bytes,
            "memory_sampling": self.memory_sampling,
            "samples": [asdict(s) for s in self.samples],
            "host": dict(self.host),
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BenchReport":
        try:
            validate_json_structure(data, REPORT_KEYS)
            report = cls(
                str(data["config_label"]),
                str(data["quant_mode"]),
                int(data["model_id"]),
                int(data["image_count"]),
                int(data["workers"]),
                PhaseStats.from_dict(data["encode"]),
                PhaseStats.from_dict(data["decode"]),
                None if data["peak_rss_bytes"] is None else int(data["peak_rss_bytes"]),
                str(data["memory_sampling"]),
                [ImageSample(**s) for s in data.get("samples", [])],
                dict(data.get("host", {})),
                str(data.get("timestamp", "")),
            )
        except (KeyError, TypeError, ValueError, DataValidationError) as e:
            raise BenchError(f"malformed bench report: {e}") from e
        report.validate()
        return report

    def to_text(self) -> str:
        """One key=value pair per line."""
        lines = [
            f"config={self.config_label}",
            f"quant_mode={self.quant_mode}",
            f"model_id={self.model_id:016x}",
            f"images={self.image_count}",
            f"workers={self.workers}",
        ]
        for phase in PHASES:
            stats = self.phase(phase)
            lines += [
                f"{phase}.p50_ms={stats.p50_ms:.3f}",
                f"{phase}.p99_ms={stats.p99_ms:.3f}",
                f"{phase}.mean_ms={stats.mean_ms:.3f}",
            ]
            lines += [f"{phase}.fps@{k}={v:.3f}" for k, v in sorted(stats.throughput_fps.items())]
        rss = MEMORY_UNAVAILABLE if self.peak_rss_bytes is None else str(self.peak_rss_bytes)
        lines.append(f"peak_rss_bytes={rss}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for s in self.samples:
            writer.writerow(
                [s.phase, s.image, s.bytes, f"{s.ms:.4f}", f"{s.psnr:.4f}", f"{s.ms_ssim:.6f}", f"{s.bpp:.6f}"]
            )
        return buffer.getvalue()

    def save(self, path: Union[str, Path]) -> None:
        """JSON, CSV or text, chosen by extension (.json, .csv, anything else)."""
        suffix = Path(path).suffix.lower()
        if suffix == ".json":
            safe_json_export(self.to_dict(), path)
        elif suffix == ".csv":
            write_bytes_atomic(self.to_csv().encode("utf-8"), path)
        else:
            write_bytes_atomic(self.to_text().encode("utf-8"), path)


def nearest_rank(ordered: Sequence[float], p: float) -> float:
    """Nearest-rank percentile of an ascending sequence."""
    if not ordered:
        raise BenchError("percentile of an empty sample")
    rank = max(1, min(len(ordered), int(round(p * len(ordered)))))
    return float(ordered[rank - 1])


class MemorySampler:
    """Background peak-RSS sampler; peak_rss_bytes is None where psutil cannot read RSS."""

    def __init__(self, interval_s: float = MEMORY_SAMPLE_INTERVAL_S):
        self.interval_s = interval_s
        self.logger = logging.getLogger(__name__)
        self.peak_rss_bytes: Optional[int] = None
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._process = safe_execute(psutil.Process, default=None, logger=self.logger, operation_name="process handle")

    def _rss(self) -> Optional[int]:
        if self._process is None:
            return None
        return safe_execute(
            lambda: self._process.memory_info().rss, logger=self.logger, operation_name="memory sample"
        )

    def _sample(self) -> None:
        rss = self._rss()
        if rss is not None:
            self.peak_rss_bytes = max(rss, self.peak_rss_bytes or 0)

    def _run(self) -> None:
        while not self._stop.wait(self.interval_s):
            self._sample()

    def __enter__(self) -> "MemorySampler":
        self._sample()
        if self.peak_rss_bytes is None:
            self.logger.warning("Resident memory sampling unavailable on this platform")
        else:
            self._thread = threading.Thread(target=self._run, name="rss-sampler", daemon=True)
            self._thread.start()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> bool:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._sample()
        return False


def _encode_path(path: Path, model: ModelWeights, reader: ImageIO):
    raster = reader.read_raster(path)
    return raster, encode_image(raster_to_tensor(raster), model)


def _decode_stream(stream: bytes, model: ModelWeights):
    return tensor_to_raster(decode_image(stream, model))


def _timed(func, *args):
    start = time.perf_counter()
    result = func(*args)
    return result, (time.perf_counter() - start) * 1000.0


def bench_run(
    model: ModelWeights,
    image_dir: Union[str, Path],
    workers: Optional[int] = None,
    warmup: Optional[int] = None,
    settings: Optional[BenchSettings] = None,
) -> BenchReport:
    """
    Benchmark encode and decode over every .png/.bmp image of image_dir.

    Pass either ``settings`` or the ``workers``/``warmup`` shorthands, not both.

    Raises:
        BenchError: if settings and shorthands are mixed, the directory holds
            no images or the pooled pass produces payloads differing from the
            single-stream pass
    """
    if settings is None:
        settings = BenchSettings(workers=1 if workers is None else workers, warmup=1 if warmup is None else warmup)
    elif workers is not None or warmup is not None:
        raise BenchError("pass workers and warmup inside settings, not alongside it")
    reader = ImageIO()
    paths = reader.list_images(image_dir)
    if not paths:
        raise BenchError(f"no .png or .bmp images in {image_dir}")
    logger.info(f"Benchmarking {len(paths)} images with {settings.workers} workers (warmup {settings.warmup})")

    for _ in range(settings.warmup):
        _, stream = _encode_path(paths[0], model, reader)
        _decode_stream(stream, model)

    samples: List[ImageSample] = []
    streams: List[bytes] = []
    timings: Dict[str, List[float]] = {phase: [] for phase in PHASES}
    with MemorySampler(settings.sample_interval_s) as sampler:
        for path in paths:
            (raster, stream), enc_ms = _timed(_encode_path, path, model, reader)
            decoded, dec_ms = _timed(_decode_stream, stream, model)
            streams.append(stream)
            timings["encode"].append(enc_ms)
            timings["decode"].append(dec_ms)
            height, width = raster.shape[:2]
            quality = (psnr(raster, decoded), ms_ssim(raster, decoded), bpp(len(stream), width, height))
            digest = hashlib.sha256(stream).hexdigest()
            for phase, ms in (("encode", enc_ms), ("decode", dec_ms)):
                samples.append(ImageSample(phase, path.name, len(stream), ms, *quality, digest))
            logger.debug(f"{path.name}: {len(stream)} bytes, encode {enc_ms:.2f} ms, decode {dec_ms:.2f} ms")

        throughput = {phase: {1: 1000.0 * len(paths) / sum(timings[phase])} for phase in PHASES}
        if settings.workers > 1:
            with ThreadPoolExecutor(max_workers=settings.workers) as pool:
                start = time.perf_counter()
                pooled = [s for _, s in pool.map(lambda p: _encode_path(p, model, reader), paths)]
                enc_wall = time.perf_counter() - start
                start = time.perf_counter()
                list(pool.map(lambda s: _decode_stream(s, model), pooled))
                dec_wall = time.perf_counter() - start
            if pooled != streams:
                raise BenchError("pooled encode produced payloads differing from the single-stream pass")
            throughput["encode"][settings.workers] = len(paths) / enc_wall
            throughput["decode"][settings.workers] = len(paths) / dec_wall

    host: Dict[str, Any] = {}
    with ErrorHandler("host description", logger, suppress_exceptions=True):
        host = get_host_description()

    report = BenchReport(
        config_label=SubConfig.from_channel_config(model.config).label(),
        quant_mode=model.quant_mode,
        model_id=model.model_id,
        image_count=len(paths),
        workers=settings.workers,
        encode=PhaseStats.from_samples(timings["encode"], throughput["encode"]),
        decode=PhaseStats.from_samples(timings["decode"], throughput["decode"]),
        peak_rss_bytes=sampler.peak_rss_bytes,
        memory_sampling="psutil" if sampler.peak_rss_bytes is not None else MEMORY_UNAVAILABLE,
        samples=samples,
        host=host,
        timestamp=datetime.now().isoformat(timespec="seconds"),
    )
    report.validate()
    logger.info(
        f"Encode p50 {report.encode.p50_ms:.2f} ms, decode p50 {report.decode.p50_ms:.2f} ms over {len(paths)} images"
    )
    return report
