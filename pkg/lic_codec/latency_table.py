"""
Latency lookup tables for hardware-aware search.

A LatencyTable maps (kind, in_c, out_c, k, s, h, w) to measured
milliseconds on one device. Kinds are the layer kinds ``conv``/``deconv``
or whole subnetworks ``g_a``/``h_a``/``h_s``/``g_s`` (recorded with
k = s = 0 and the subnetwork's input dims).

File format (text, one record per line):

    # lic-codec latency table v1
    # device: Tesla T4
    # timestamp: 2024-01-01T00:00:00
    kind,in_c,out_c,k,s,h,w,ms
    g_a,3,176,0,0,1088,1920,7.25
"""

import csv
import io
import logging
import statistics
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from model_store import CHANNEL_CONFIGS, ChannelConfig, SplitMix64
from supernet import SubConfig, codec_layer_inputs, layer_inputs, subnetwork_inputs
from tensor_core import LAYER_KINDS, LayerSpec, conv2d_array, deconv2d_array
from utils import LicCodecError, PerformanceTimer, device_label, read_bytes, write_bytes_atomic

logger = logging.getLogger(__name__)

TABLE_VERSION_LINE = "# lic-codec latency table v1"
CSV_HEADER = ["kind", "in_c", "out_c", "k", "s", "h", "w", "ms"]
SUBNETWORK_KINDS = ("g_a", "h_a", "h_s", "g_s")
MIN_WARMUP = 3
MIN_REPETITIONS = 10
LATENCY_FLOOR_MS = 1e-6
LATENCY_DECIMALS = 6
REFERENCE_INPUT_HW = (1088, 1920)

# Per-subnetwork milliseconds at 1088x1920, measured with TensorRT.
REFERENCE_SUBNETWORK_LATENCY = {
    "Tesla T4": {"g_a": 7.25, "g_s": 5.48, "h_a": 1.15, "h_s": 1.17},
    "GeForce GTX 1660 SUPER": {"g_a": 10.08, "g_s": 10.75, "h_a": 1.68, "h_s": 2.80},
}


class LatencyLookupError(LicCodecError):
    """Raised when a latency cannot be looked up or interpolated."""

    pass


class MeasurementError(LicCodecError):
    """Raised for invalid measurement requests."""

    pass


class LatencyKey(NamedTuple):
    kind: str
    in_c: int
    out_c: int
    k: int
    s: int
    h: int
    w: int

    def describe(self) -> str:
        return ",".join(str(v) for v in self)

    @classmethod
    def for_layer(cls, spec: LayerSpec, input_hw: Tuple[int, int]) -> "LatencyKey":
        return cls(spec.kind, spec.in_channels, spec.out_channels, spec.kernel, spec.stride, *input_hw)


def subnetwork_key(config: ChannelConfig, subnetwork: str, input_hw: Tuple[int, int]) -> LatencyKey:
    specs = config.subnetwork_specs(subnetwork)
    return LatencyKey(subnetwork, specs[0].in_channels, specs[-1].out_channels, 0, 0, *input_hw)


class LatencyTable:
    """Measured per-key latencies of one device, with linear interpolation in out_c."""

    def __init__(
        self,
        device: str = "unknown",
        timestamp: Optional[str] = None,
        entries: Optional[Dict[LatencyKey, float]] = None,
    ):
        self.device = device
        self.timestamp = timestamp or datetime.now().isoformat(timespec="seconds")
        self._entries: Dict[LatencyKey, float] = {}
        for key, ms in (entries or {}).items():
            self.add(key, ms)

    def add(self, key: Union[LatencyKey, Sequence], ms: float) -> None:
        key = LatencyKey(*key)
        if key.kind not in LAYER_KINDS + SUBNETWORK_KINDS:
            raise LatencyLookupError(f"unknown latency kind {key.kind!r}")
        if not ms > 0:
            raise LatencyLookupError(f"latency must be positive, got {ms} for {key.describe()}")
        self._entries[key] = float(ms)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def items(self) -> List[Tuple[LatencyKey, float]]:
        return sorted(self._entries.items())

    def lookup(self, key: LatencyKey) -> float:
        """
        Exact value if measured, else linear interpolation in out_c between
        the nearest measured neighbours sharing every other field.

        Raises:
            LatencyLookupError: naming the key when it lies outside the measured hull
        """
        if key in self._entries:
            return self._entries[key]
        neighbours = sorted(
            (k.out_c, ms) for k, ms in self._entries.items() if k._replace(out_c=key.out_c) == key
        )
        below = [(c, ms) for c, ms in neighbours if c < key.out_c]
        above = [(c, ms) for c, ms in neighbours if c > key.out_c]
        if not below or not above:
            raise LatencyLookupError(f"no measured latency for key {key.describe()} (outside measured out_c range)")
        (c0, ms0), (c1, ms1) = below[-1], above[0]
        return ms0 + (ms1 - ms0) * (key.out_c - c0) / (c1 - c0)

    def has(self, key: LatencyKey) -> bool:
        try:
            self.lookup(key)
            return True
        except LatencyLookupError:
            return False

    # Serialization

    def to_text(self) -> str:
        buffer = io.StringIO()
        buffer.write(f"{TABLE_VERSION_LINE}\n# device: {self.device}\n# timestamp: {self.timestamp}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for key, ms in self.items():
            writer.writerow(list(key) + [repr(ms)])
        return buffer.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "LatencyTable":
        lines = text.splitlines()
        if not lines or lines[0].strip() != TABLE_VERSION_LINE:
            raise LatencyLookupError("not a lic-codec latency table (missing or unsupported version line)")
        meta: Dict[str, str] = {}
        body: List[str] = []
        for line in lines[1:]:
            if line.startswith("#"):
                name, _, value = line[1:].partition(":")
                meta[name.strip()] = value.strip()
            elif line.strip():
                body.append(line)
        table = cls(meta.get("device", "unknown"), meta.get("timestamp"))
        rows = list(csv.reader(body))
        if not rows or rows[0] != CSV_HEADER:
            raise LatencyLookupError(f"latency table header must be {','.join(CSV_HEADER)}")
        for row in rows[1:]:
            try:
                kind, *ints, ms = row
                table.add(LatencyKey(kind, *(int(v) for v in ints)), float(ms))
            except (TypeError, ValueError) as e:
                raise LatencyLookupError(f"malformed latency record {','.join(row)}: {e}") from e
        return table

    def save(self, path: Union[str, Path]) -> None:
        write_bytes_atomic(self.to_text().encode("utf-8"), path)
        logger.info(f"Saved latency table ({len(self)} records, device {self.device}) to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "LatencyTable":
        return cls.from_text(read_bytes(path).decode("utf-8"))


def reference_table(
    device: str = "Tesla T4",
    config: Optional[ChannelConfig] = None,
    input_hw: Tuple[int, int] = REFERENCE_INPUT_HW,
) -> LatencyTable:
    """Per-subnetwork reference latencies of a device for a 1088x1920 input."""
    if device not in REFERENCE_SUBNETWORK_LATENCY:
        raise LatencyLookupError(f"no reference latencies for {device!r}")
    config = config or CHANNEL_CONFIGS["origin"]
    starts = subnetwork_inputs(config, input_hw)
    table = LatencyTable(device, "reference")
    for subnetwork, ms in REFERENCE_SUBNETWORK_LATENCY[device].items():
        table.add(subnetwork_key(config, subnetwork, starts[subnetwork]), ms)
    return table


def lut_latency(
    cfg: Union[SubConfig, ChannelConfig, Sequence[LayerSpec]],
    table: LatencyTable,
    input_hw: Tuple[int, int] = REFERENCE_INPUT_HW,
) -> float:
    """
    Sum of looked-up latencies, rounded to 1e-6 ms.

    For a codec config each subnetwork uses its whole-subnetwork record when
    the table has one and the sum of its layers otherwise.

    Raises:
        LatencyLookupError: listing the missing keys
    """
    total = 0.0
    missing: List[str] = []

    def add_layers(pairs: Iterable[Tuple[LayerSpec, Tuple[int, int]]]) -> float:
        subtotal = 0.0
        for spec, hw in pairs:
            key = LatencyKey.for_layer(spec, hw)
            try:
                subtotal += table.lookup(key)
            except LatencyLookupError:
                missing.append(key.describe())
        return subtotal

    if isinstance(cfg, (SubConfig, ChannelConfig)):
        config = cfg.to_channel_config() if isinstance(cfg, SubConfig) else cfg
        starts = subnetwork_inputs(config, input_hw)
        for subnetwork in SUBNETWORK_KINDS:
            key = subnetwork_key(config, subnetwork, starts[subnetwork])
            if table.has(key):
                total += table.lookup(key)
            else:
                total += add_layers(layer_inputs(config.subnetwork_specs(subnetwork), starts[subnetwork]))
    else:
        total += add_layers(layer_inputs(list(cfg), input_hw))

    if missing:
        raise LatencyLookupError(f"latency table ({table.device}) lacks keys: {'; '.join(missing)}")
    return round(total, LATENCY_DECIMALS)


# Measurement


LayerRunner = Callable[[], object]


def default_layer_runner(key: LatencyKey) -> LayerRunner:
    """Seeded random weights and input for one layer key, run with the float kernels."""
    if key.kind not in LAYER_KINDS:
        raise MeasurementError(f"default runner measures single layers only, got kind {key.kind!r}")
    rng = SplitMix64(key.in_c * 1_000_003 + key.out_c)
    x = rng.uniform(key.in_c * key.h * key.w).reshape(1, key.in_c, key.h, key.w)
    w = rng.uniform(key.out_c * key.in_c * key.k * key.k).reshape(key.out_c, key.in_c, key.k, key.k) - 0.5
    kernel = conv2d_array if key.kind == "conv" else deconv2d_array
    return lambda: kernel(x, w, key.s)


def measure_latency_table(
    shapes: Sequence[Union[LatencyKey, Sequence]],
    repetitions: int = MIN_REPETITIONS,
    warmup: int = MIN_WARMUP,
    model_builder: Callable[[LatencyKey], LayerRunner] = default_layer_runner,
    device: Optional[str] = None,
) -> LatencyTable:
    """
    Time each shape on this host: ``warmup`` untimed runs, then the median of
    ``repetitions`` timed runs.

    Raises:
        MeasurementError: if warmup < 3 or repetitions < 10
    """
    if repetitions < MIN_REPETITIONS:
        raise MeasurementError(f"repetitions must be >= {MIN_REPETITIONS}, got {repetitions}")
    if warmup < MIN_WARMUP:
        raise MeasurementError(f"warmup must be >= {MIN_WARMUP}, got {warmup}")

    table = LatencyTable(device or device_label())
    for shape in shapes:
        key = LatencyKey(*shape)
        run = model_builder(key)
        for _ in range(warmup):
            run()
        samples = []
        for _ in range(repetitions):
            with PerformanceTimer(f"latency {key.describe()}", quiet=True) as timer:
                run()
            samples.append(timer.duration_ms)
        median = statistics.median(samples)
        table.add(key, max(median, LATENCY_FLOOR_MS))
        logger.debug(f"Measured {key.describe()}: median {median:.4f} ms over {repetitions} runs")
    logger.info(f"Measured {len(table)} latency records on {table.device}")
    return table


def codec_layer_keys(config: ChannelConfig, input_hw: Tuple[int, int]) -> List[LatencyKey]:
    """Every distinct layer key of a codec config, for measurement."""
    keys = [LatencyKey.for_layer(spec, hw) for spec, hw in codec_layer_inputs(config, input_hw)]
    return list(dict.fromkeys(keys))


def parse_shape(text: str) -> LatencyKey:
    """``conv,3,32,5,2,64,64`` to a LatencyKey."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 7:
        raise MeasurementError(f"shape must be kind,in_c,out_c,k,s,h,w; got {text!r}")
    try:
        return LatencyKey(parts[0], *(int(p) for p in parts[1:]))
    except ValueError as e:
        raise MeasurementError(f"shape must be kind,in_c,out_c,k,s,h,w; got {text!r}") from e


def monotone_in_out_c(table: LatencyTable) -> bool:
    """True when latency never decreases as out_c grows with other fields fixed."""
    groups: Dict[LatencyKey, List[Tuple[int, float]]] = {}
    for key, ms in table.items():
        groups.setdefault(key._replace(out_c=0), []).append((key.out_c, ms))
    return all(np.all(np.diff([ms for _, ms in sorted(v)]) >= 0) for v in groups.values())
