"""
Model storage for the LIC codec.

Channel configurations, the immutable ModelWeights container, the "LICW"
chunked weight file, and deterministic seed initialization.

LICW layout (all little-endian):

    magic "LICW" | version u8 | model_id u64 | config block | chunk count u32
    | chunks ... | CRC32 u32

    config block: quant mode u8, then for g_a, h_a, h_s, g_s: u8 count + u32 widths
    chunk: u16 name length | name utf-8 | dtype tag u8 | ndim u8 | u32 dims
           | u32 scale count | f64 scales | raw data

model_id is the first 8 bytes (as u64) of SHA-256 over everything between
the model_id field and the CRC; the CRC32 covers everything before itself.
"""

import hashlib
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from entropy_coding import CdfTable, build_cdf_table, default_scale_table
from tensor_core import (
    INT32_MAX,
    INT32_MIN,
    LayerSpec,
    QuantTensor,
    Requant,
    check_accumulator_bound,
    round_half_away,
)
from utils import (
    DataValidationError,
    FileOperationError,
    LicCodecError,
    load_json_file,
    read_bytes,
    validate_json_structure,
    write_bytes_atomic,
)

logger = logging.getLogger(__name__)

WEIGHT_MAGIC = b"LICW"
WEIGHT_VERSION = 1
DEFAULT_MU_SCALE = 1.0 / 64.0
DEFAULT_SIGMA_SCALE = 1.0 / 64.0
BIAS_INIT_RANGE = 0.1

QUANT_MODES = ("float", "hs-int", "enc-int", "full-int")
SUBNETWORKS = ("g_a", "h_a", "h_s", "g_s")

# Subnetworks running the integer path in each mode; h_s always does.
INT_SUBNETWORKS = {
    "float": ("h_s",),
    "hs-int": ("h_s",),
    "enc-int": ("g_a", "h_a", "h_s"),
    "full-int": ("g_a", "h_a", "h_s", "g_s"),
}

DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("i1"), 4: np.dtype("<i4"), 5: np.dtype("<i8")}
DTYPE_TO_TAG = {np.dtype(v).str: k for k, v in DTYPE_TAGS.items()}


class WeightFileError(LicCodecError):
    """Raised when a weight file or a ModelWeights instance is invalid."""

    pass


class ChannelConfigError(LicCodecError):
    """Raised when a channel configuration is invalid."""

    pass


# Channel configurations


@dataclass(frozen=True)
class ChannelConfig:
    """Output channels of every (de)convolution of the four subnetworks."""

    ga_channels: Tuple[int, ...]
    ha_channels: Tuple[int, ...]
    hs_channels: Tuple[int, ...]
    gs_channels: Tuple[int, ...]

    def __post_init__(self) -> None:
        expected = {"ga_channels": 4, "ha_channels": 3, "hs_channels": 3, "gs_channels": 4}
        for name, count in expected.items():
            values = tuple(int(v) for v in getattr(self, name))
            object.__setattr__(self, name, values)
            if len(values) != count:
                raise ChannelConfigError(f"{name} needs {count} entries, got {len(values)}")
            if any(v < 1 for v in values):
                raise ChannelConfigError(f"{name} entries must be positive, got {values}")
        if self.gs_channels[-1] != 3:
            raise ChannelConfigError(f"last g_s layer must output 3 channels, got {self.gs_channels[-1]}")
        if self.hs_channels[-1] != self.ga_channels[-1]:
            raise ChannelConfigError(
                f"last h_s width {self.hs_channels[-1]} must equal latent channels {self.ga_channels[-1]}"
            )

    @property
    def latent_channels(self) -> int:
        return self.ga_channels[-1]

    @property
    def hyper_channels(self) -> int:
        return self.ha_channels[-1]

    def layer_specs(self) -> List[LayerSpec]:
        """All 14 layers in canonical order, named like ``g_a.0``."""
        m = self.latent_channels
        specs: List[LayerSpec] = []

        in_c = 3
        for i, out_c in enumerate(self.ga_channels):
            act = "relu" if i < 3 else "none"
            specs.append(LayerSpec("conv", in_c, out_c, 5, 2, act, f"g_a.{i}"))
            in_c = out_c

        in_c = m
        for i, (out_c, kernel, stride) in enumerate(zip(self.ha_channels, (3, 5, 5), (1, 2, 2))):
            act = "relu" if i < 2 else "none"
            specs.append(LayerSpec("conv", in_c, out_c, kernel, stride, act, f"h_a.{i}"))
            in_c = out_c

        in_c = self.hyper_channels
        for i, out_c in enumerate(self.hs_channels[:2]):
            specs.append(LayerSpec("deconv", in_c, out_c, 5, 2, "relu6", f"h_s.{i}"))
            in_c = out_c
        specs.append(LayerSpec("conv", in_c, 2 * m, 3, 1, "none", "h_s.2"))

        in_c = m
        for i, out_c in enumerate(self.gs_channels):
            act = "relu" if i < 3 else "none"
            specs.append(LayerSpec("deconv", in_c, out_c, 5, 2, act, f"g_s.{i}"))
            in_c = out_c
        return specs

    def subnetwork_specs(self, subnetwork: str) -> List[LayerSpec]:
        return [spec for spec in self.layer_specs() if spec.name.startswith(subnetwork + ".")]

    def to_dict(self) -> Dict[str, List[int]]:
        return {
            "ga_channels": list(self.ga_channels),
            "ha_channels": list(self.ha_channels),
            "hs_channels": list(self.hs_channels),
            "gs_channels": list(self.gs_channels),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ChannelConfig":
        try:
            validate_json_structure(data, ["ga_channels", "ha_channels", "hs_channels", "gs_channels"])
            return cls(
                tuple(data["ga_channels"]),
                tuple(data["ha_channels"]),
                tuple(data["hs_channels"]),
                tuple(data["gs_channels"]),
            )
        except (KeyError, TypeError, ValueError, DataValidationError) as e:
            raise ChannelConfigError(f"invalid channel configuration document: {e}") from e


CHANNEL_CONFIGS: Dict[str, ChannelConfig] = {
    "origin": ChannelConfig((48, 96, 112, 176), (176, 246, 176), (246, 176, 176), (176, 112, 96, 3)),
    "nas": ChannelConfig((32, 120, 104, 220), (248, 224, 256), (236, 200, 220), (220, 112, 112, 3)),
}


def resolve_channel_config(name_or_path: Union[str, Path]) -> ChannelConfig:
    """Resolve ``origin``/``nas`` or a JSON file with the four channel lists."""
    key = str(name_or_path)
    if key in CHANNEL_CONFIGS:
        return CHANNEL_CONFIGS[key]
    try:
        return ChannelConfig.from_dict(load_json_file(key))
    except FileOperationError as e:
        raise ChannelConfigError(f"unknown channel config {key!r}: not a built-in name and {e}") from e


# Deterministic PRNG


class SplitMix64:
    """
    SplitMix64 generator, vectorized over a counter.

    Output i is mix(seed + (i + 1) * 0x9E3779B97F4A7C15) mod 2**64, so any
    block of outputs can be produced in one numpy call and the stream is the
    same on every platform.
    """

    GOLDEN = np.uint64(0x9E3779B97F4A7C15)
    MIX1 = np.uint64(0xBF58476D1CE4E5B9)
    MIX2 = np.uint64(0x94D049BB133111EB)

    def __init__(self, seed: int):
        self.seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def next_uint64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = self.seed + idx * self.GOLDEN
            z = (z ^ (z >> np.uint64(30))) * self.MIX1
            z = (z ^ (z >> np.uint64(27))) * self.MIX2
            z = z ^ (z >> np.uint64(31))
        return z

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1) from the top 53 bits."""
        return (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers in [0, bound)."""
        if bound < 1:
            raise ValueError(f"bound must be >= 1, got {bound}")
        return np.minimum((self.uniform(n) * bound).astype(np.int64), bound - 1)

    def choice_index(self, bound: int) -> int:
        return int(self.integers(1, bound)[0])


# Model container


@dataclass(frozen=True)
class QuantLayer:
    """
    Integer-path parameters of one layer.

    Weights are int8 with per-output-channel scales, the bias is int32 in
    units of in_scale * weight_scale[c], and the requant block maps int
    accumulators onto the output step.
    """

    weight: QuantTensor
    bias: np.ndarray
    requant: Requant
    in_scale: float

    def __post_init__(self) -> None:
        bias = np.array(self.bias, dtype=np.int64).reshape(-1)
        if (bias < INT32_MIN).any() or (bias > INT32_MAX).any():
            raise WeightFileError("quantized bias exceeds int32")
        bias.setflags(write=False)
        object.__setattr__(self, "bias", bias)
        if not self.in_scale > 0:
            raise WeightFileError(f"quantized layer input scale must be positive, got {self.in_scale}")

    @property
    def out_scale(self) -> float:
        return self.requant.out_scale


@dataclass(frozen=True, eq=False)
class ModelWeights:
    """
    Immutable parameter store of one codec model.

    ``quant`` holds integer-path parameters per layer name; the three h_s
    layers are always present, further subnetworks depending on quant_mode.
    """

    config: ChannelConfig
    weights: Mapping[str, np.ndarray]
    biases: Mapping[str, np.ndarray]
    z_mu: np.ndarray
    z_sigma: np.ndarray
    quant: Mapping[str, QuantLayer]
    mu_scale: float = DEFAULT_MU_SCALE
    sigma_scale: float = DEFAULT_SIGMA_SCALE
    quant_mode: str = "float"
    specs: Tuple[LayerSpec, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "specs", tuple(self.config.layer_specs()))
        weights = {k: _frozen(v) for k, v in self.weights.items()}
        biases = {k: _frozen(v) for k, v in self.biases.items()}
        object.__setattr__(self, "weights", MappingProxyType(weights))
        object.__setattr__(self, "biases", MappingProxyType(biases))
        object.__setattr__(self, "quant", MappingProxyType(dict(self.quant)))
        object.__setattr__(self, "z_mu", _frozen(np.asarray(self.z_mu, dtype=np.float64)))
        object.__setattr__(self, "z_sigma", _frozen(np.asarray(self.z_sigma, dtype=np.float64)))
        self.validate()

    def validate(self) -> None:
        if self.quant_mode not in QUANT_MODES:
            raise WeightFileError(f"unknown quantization mode {self.quant_mode!r}")
        for spec in self.specs:
            w = self.weights.get(spec.name)
            b = self.biases.get(spec.name)
            if w is None or b is None:
                raise WeightFileError(f"layer {spec.name}: missing weight or bias")
            if tuple(w.shape) != spec.weight_shape:
                raise WeightFileError(f"layer {spec.name}: weight shape {tuple(w.shape)} != {spec.weight_shape}")
            if b.shape != (spec.out_channels,):
                raise WeightFileError(f"layer {spec.name}: bias shape {b.shape} != ({spec.out_channels},)")
            if not np.isfinite(w).all() or not np.isfinite(b).all():
                raise WeightFileError(f"layer {spec.name}: non-finite parameters")
        extra = set(self.weights) - {s.name for s in self.specs}
        if extra:
            raise WeightFileError(f"unexpected layers for this config: {sorted(extra)}")

        z = self.config.hyper_channels
        if self.z_mu.shape != (z,) or self.z_sigma.shape != (z,):
            raise WeightFileError(f"z prior must have {z} entries per parameter")
        if not (self.z_sigma > 0).all() or not np.isfinite(self.z_mu).all():
            raise WeightFileError("z prior sigma must be positive and mu finite")
        if not self.mu_scale > 0 or not self.sigma_scale > 0:
            raise WeightFileError(f"hyper output steps must be positive: {self.mu_scale}, {self.sigma_scale}")

        for subnetwork in INT_SUBNETWORKS[self.quant_mode]:
            for spec in self.config.subnetwork_specs(subnetwork):
                layer = self.quant.get(spec.name)
                if layer is None:
                    raise WeightFileError(f"layer {spec.name}: integer parameters missing for mode {self.quant_mode}")
                if layer.weight.dims != spec.weight_shape or len(layer.bias) != spec.out_channels:
                    raise WeightFileError(f"layer {spec.name}: integer parameter shapes disagree with config")
                check_accumulator_bound(spec)

    def spec(self, name: str) -> LayerSpec:
        for spec in self.specs:
            if spec.name == name:
                return spec
        raise WeightFileError(f"no layer named {name!r}")

    def uses_int(self, subnetwork: str) -> bool:
        return subnetwork in INT_SUBNETWORKS[self.quant_mode]

    @cached_property
    def model_id(self) -> int:
        body = _serialize_body(self)
        return int.from_bytes(hashlib.sha256(body).digest()[:8], "little")

    @cached_property
    def z_tables(self) -> Tuple[CdfTable, ...]:
        """One zero-mean table per hyper-latent channel, built from sigma_c."""
        return tuple(build_cdf_table(float(s)) for s in self.z_sigma)

    @cached_property
    def z_offsets(self) -> np.ndarray:
        return round_half_away(self.z_mu).astype(np.int64)

    @cached_property
    def sigma_thresholds(self) -> np.ndarray:
        """
        T_k = floor(bins[k] / s_sigma) for k < 63; the bin of an integer sigma
        output v is #{k : T_k < v}, equal to sigma_to_bin(v * s_sigma).
        """
        bins = default_scale_table().bins
        thresholds = np.floor(bins[:-1] / self.sigma_scale).astype(np.int64)
        thresholds.setflags(write=False)
        return thresholds

    def with_quant(self, quant: Mapping[str, QuantLayer], quant_mode: str) -> "ModelWeights":
        return ModelWeights(
            self.config,
            dict(self.weights),
            dict(self.biases),
            self.z_mu,
            self.z_sigma,
            quant,
            self.mu_scale,
            self.sigma_scale,
            quant_mode,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelWeights):
            return NotImplemented
        return serialize_weights(self) == serialize_weights(other)

    def __hash__(self) -> int:
        return self.model_id

    @property
    def parameter_count(self) -> int:
        return int(sum(w.size for w in self.weights.values()) + sum(b.size for b in self.biases.values()))


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


# Serialization


class _Writer:
    def __init__(self) -> None:
        self.parts: List[bytes] = []

    def pack(self, fmt: str, *values: Any) -> None:
        self.parts.append(struct.pack("<" + fmt, *values))

    def raw(self, data: bytes) -> None:
        self.parts.append(data)

    def chunk(self, name: str, array: np.ndarray, scales: Optional[np.ndarray] = None) -> None:
        arr = np.ascontiguousarray(array)
        arr = arr.astype(arr.dtype.newbyteorder("<")) if arr.dtype.byteorder == ">" else arr
        tag = DTYPE_TO_TAG.get(arr.dtype.str)
        if tag is None:
            raise WeightFileError(f"chunk {name}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        self.pack("H", len(encoded))
        self.raw(encoded)
        self.pack("BB", tag, arr.ndim)
        for dim in arr.shape:
            self.pack("I", dim)
        scale_values = np.zeros(0) if scales is None else np.asarray(scales, dtype="<f8").reshape(-1)
        self.pack("I", len(scale_values))
        self.raw(np.asarray(scale_values, dtype="<f8").tobytes())
        self.raw(arr.tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightFileError(f"weight file truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple[Any, ...]:
        size = struct.calcsize("<" + fmt)
        return struct.unpack("<" + fmt, self.take(size))

    def chunk(self) -> Tuple[str, np.ndarray, np.ndarray]:
        (name_len,) = self.unpack("H")
        try:
            name = self.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise WeightFileError(f"chunk name is not utf-8 at byte {self.pos}") from e
        tag, ndim = self.unpack("BB")
        if tag not in DTYPE_TAGS:
            raise WeightFileError(f"chunk {name}: unknown dtype tag {tag}")
        shape = self.unpack("I" * ndim) if ndim else ()
        (scale_count,) = self.unpack("I")
        scales = np.frombuffer(self.take(8 * scale_count), dtype="<f8").astype(np.float64)
        dtype = DTYPE_TAGS[tag]
        count = int(np.prod(shape)) if ndim else 1
        array = np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype).reshape(shape)
        return name, array, scales


def _serialize_body(model: ModelWeights) -> bytes:
    w = _Writer()
    w.pack("B", QUANT_MODES.index(model.quant_mode))
    for values in (
        model.config.ga_channels,
        model.config.ha_channels,
        model.config.hs_channels,
        model.config.gs_channels,
    ):
        w.pack("B", len(values))
        w.pack("I" * len(values), *values)

    chunks: List[Tuple[str, np.ndarray, Optional[np.ndarray]]] = []
    for spec in model.specs:
        chunks.append((f"{spec.name}.weight", model.weights[spec.name], None))
        chunks.append((f"{spec.name}.bias", model.biases[spec.name], None))
    chunks.append(("z_prior.mu", np.asarray(model.z_mu, dtype="<f8"), None))
    chunks.append(("z_prior.sigma", np.asarray(model.z_sigma, dtype="<f8"), None))
    chunks.append(("hyper.scales", np.array([model.mu_scale, model.sigma_scale], dtype="<f8"), None))
    for spec in model.specs:
        layer = model.quant.get(spec.name)
        if layer is None:
            continue
        weight_scale = np.broadcast_to(np.asarray(layer.weight.scale, dtype=np.float64), (spec.out_channels,))
        chunks.append((f"{spec.name}.qweight", layer.weight.data.astype(np.int8), weight_scale))
        chunks.append((f"{spec.name}.qbias", layer.bias.astype("<i4"), None))
        chunks.append((f"{spec.name}.requant_m", layer.requant.multiplier.astype("<i8"), None))
        chunks.append((f"{spec.name}.requant_n", layer.requant.shift.astype("<i8"), None))
        meta = np.array([layer.in_scale, layer.requant.out_scale, layer.requant.lo, layer.requant.hi], dtype="<f8")
        chunks.append((f"{spec.name}.qmeta", meta, None))

    w.pack("I", len(chunks))
    for name, array, scales in chunks:
        w.chunk(name, np.asarray(array), scales)
    return w.getvalue()


def serialize_weights(model: ModelWeights) -> bytes:
    """Canonical LICW bytes of a model."""
    body = _serialize_body(model)
    model_id = int.from_bytes(hashlib.sha256(body).digest()[:8], "little")
    head = WEIGHT_MAGIC + struct.pack("<BQ", WEIGHT_VERSION, model_id)
    payload = head + body
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def deserialize_weights(data: bytes) -> ModelWeights:
    """
    Parse and validate LICW bytes.

    Raises:
        WeightFileError: bad magic, version, CRC, shape, sigma or model id
    """
    if len(data) < 4 + 1 + 8 + 4:
        raise WeightFileError(f"weight file truncated: {len(data)} bytes")
    if data[:4] != WEIGHT_MAGIC:
        raise WeightFileError(f"bad weight file magic {data[:4]!r}")
    payload, crc_bytes = data[:-4], data[-4:]
    (stored_crc,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise WeightFileError("weight file CRC mismatch (truncated or corrupt)")

    reader = _Reader(payload)
    reader.take(4)
    version, stored_id = reader.unpack("BQ")
    if version != WEIGHT_VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")

    body_start = reader.pos
    (mode_index,) = reader.unpack("B")
    if mode_index >= len(QUANT_MODES):
        raise WeightFileError(f"unknown quantization mode index {mode_index}")
    groups = []
    for _ in range(4):
        (count,) = reader.unpack("B")
        groups.append(reader.unpack("I" * count))
    try:
        config = ChannelConfig(*groups)
    except ChannelConfigError as e:
        raise WeightFileError(f"invalid config block: {e}") from e

    (chunk_count,) = reader.unpack("I")
    chunks: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    for _ in range(chunk_count):
        name, array, scales = reader.chunk()
        if name in chunks:
            raise WeightFileError(f"duplicate chunk {name}")
        chunks[name] = (array, scales)
    if reader.pos != len(payload):
        raise WeightFileError(f"{len(payload) - reader.pos} trailing bytes after last chunk")

    body_id = int.from_bytes(hashlib.sha256(payload[body_start:]).digest()[:8], "little")
    if body_id != stored_id:
        raise WeightFileError(f"model id mismatch: stored {stored_id:016x}, computed {body_id:016x}")

    def get(name: str) -> Tuple[np.ndarray, np.ndarray]:
        if name not in chunks:
            raise WeightFileError(f"missing chunk {name}")
        return chunks[name]

    weights: Dict[str, np.ndarray] = {}
    biases: Dict[str, np.ndarray] = {}
    quant: Dict[str, QuantLayer] = {}
    try:
        for spec in config.layer_specs():
            weights[spec.name] = get(f"{spec.name}.weight")[0]
            biases[spec.name] = get(f"{spec.name}.bias")[0]
            if f"{spec.name}.qweight" in chunks:
                qweight, weight_scale = get(f"{spec.name}.qweight")
                in_scale, out_scale, lo, hi = get(f"{spec.name}.qmeta")[0].tolist()
                requant = Requant(
                    get(f"{spec.name}.requant_m")[0],
                    get(f"{spec.name}.requant_n")[0],
                    out_scale,
                    int(lo),
                    int(hi),
                )
                quant[spec.name] = QuantLayer(
                    QuantTensor(qweight.astype(np.int8), weight_scale),
                    get(f"{spec.name}.qbias")[0],
                    requant,
                    in_scale,
                )
        mu_scale, sigma_scale = get("hyper.scales")[0].tolist()
        model = ModelWeights(
            config,
            weights,
            biases,
            get("z_prior.mu")[0],
            get("z_prior.sigma")[0],
            quant,
            mu_scale,
            sigma_scale,
            QUANT_MODES[mode_index],
        )
    except LicCodecError as e:
        if isinstance(e, WeightFileError):
            raise
        raise WeightFileError(f"invalid weight file contents: {e}") from e
    return model


def save_weights(model: ModelWeights, path: Union[str, Path]) -> int:
    """Write a model as a LICW file and return its model id."""
    write_bytes_atomic(serialize_weights(model), path)
    logger.info(f"Saved weights {model.model_id:016x} ({model.quant_mode}) to {path}")
    return model.model_id


def load_weights(path: Union[str, Path]) -> ModelWeights:
    """Load and validate a LICW weight file."""
    try:
        data = read_bytes(path)
    except FileOperationError as e:
        raise WeightFileError(str(e)) from e
    model = deserialize_weights(data)
    logger.info(f"Loaded weights {model.model_id:016x} ({model.quant_mode}) from {path}")
    return model


# Seed initialization


def init_weights(config: ChannelConfig, seed: int, weight_scale: float = 1.0) -> ModelWeights:
    """
    Deterministic pseudo-random model.

    SplitMix64 outputs are consumed layer by layer in canonical order, weight
    tensor first then bias: weights (2u - 1) / sqrt(fan_in) * weight_scale
    stored as float32, biases (2u - 1) * 0.1. The z prior starts at mu = 0,
    sigma = 1 and both hyper output steps at 1/64. Integer h_s parameters
    come from data-free calibration on seeded synthetic hyper-latents.
    """
    rng = SplitMix64(seed)
    weights: Dict[str, np.ndarray] = {}
    biases: Dict[str, np.ndarray] = {}
    for spec in config.layer_specs():
        fan_in = spec.in_channels * spec.kernel * spec.kernel
        count = int(np.prod(spec.weight_shape))
        u = rng.uniform(count).reshape(spec.weight_shape)
        weights[spec.name] = ((2.0 * u - 1.0) / math.sqrt(fan_in) * weight_scale).astype(np.float32)
        biases[spec.name] = ((2.0 * rng.uniform(spec.out_channels) - 1.0) * BIAS_INIT_RANGE).astype(np.float32)

    z = config.hyper_channels
    z_mu = np.zeros(z, dtype=np.float64)
    z_sigma = np.ones(z, dtype=np.float64)

    from quantization import calibrate_hyper_synthesis_data_free

    quant = calibrate_hyper_synthesis_data_free(
        config, weights, biases, DEFAULT_MU_SCALE, DEFAULT_SIGMA_SCALE, seed=seed
    )
    model = ModelWeights(config, weights, biases, z_mu, z_sigma, quant, DEFAULT_MU_SCALE, DEFAULT_SIGMA_SCALE)
    logger.debug(f"Initialized weights for seed {seed}: {model.parameter_count} parameters")
    return model
