"""
End-to-end encode/decode of the LIC codec and its "LICP" bitstream container.

Container (little-endian): a 34-byte header followed by the z stream, the y
stream and the bypass stream, in that order and with no trailing bytes.

    magic "LICP" | version u8 | flags u8 | width u32 | height u32
    | model_id u64 | z_stream_len u32 | y_stream_len u32 | bypass_len u32

Flags bits 0-1 record the quantization mode; the other bits must be zero.
The bypass stream holds the escaped z values followed by the escaped y
values, each as 16-bit two's complement.
"""

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from entropy_coding import (
    BYPASS_BITS,
    SymbolStream,
    bypass_decode,
    bypass_encode,
    default_scale_table,
    desymbolize,
    quantized_cross_entropy,
    range_decode,
    range_encode,
    symbolize,
)
from model_store import QUANT_MODES, ChannelConfig, ModelWeights
from tensor_core import ShapeMismatchError, Tensor, round_half_away
from transforms import analysis_transform, hyper_analysis_transform, hyper_synthesis_int, synthesis_transform
from utils import LicCodecError, PerformanceTimer, timed

logger = logging.getLogger(__name__)

BITSTREAM_MAGIC = b"LICP"
BITSTREAM_VERSION = 1
HEADER_STRUCT = struct.Struct("<4sBBIIQIII")
HEADER_SIZE = HEADER_STRUCT.size
PAD_MULTIPLE = 64
LATENT_STRIDE = 16
HYPER_STRIDE = 64
MODE_MASK = 0x03
MAX_DIMENSION = 2**32 - 1


class BitstreamError(LicCodecError):
    """Raised for malformed containers: magic, version, flags or lengths."""

    pass


class ModelMismatchError(LicCodecError):
    """Raised when a bitstream was produced by a different model."""

    pass


class DimensionOverflowError(LicCodecError):
    """Raised when image dimensions do not fit the container fields."""

    pass


@dataclass(frozen=True)
class BitstreamHeader:
    width: int
    height: int
    model_id: int
    z_stream_len: int
    y_stream_len: int
    bypass_len: int
    flags: int = 0
    version: int = BITSTREAM_VERSION
    magic: bytes = BITSTREAM_MAGIC

    def pack(self) -> bytes:
        try:
            return HEADER_STRUCT.pack(
                self.magic,
                self.version,
                self.flags,
                self.width,
                self.height,
                self.model_id,
                self.z_stream_len,
                self.y_stream_len,
                self.bypass_len,
            )
        except struct.error as e:
            raise DimensionOverflowError(f"header field out of range: {e}") from e

    @classmethod
    def unpack(cls, data: bytes) -> "BitstreamHeader":
        """Parse and validate magic, version and flags; lengths are checked by ``validate_length``."""
        if len(data) < HEADER_SIZE:
            raise BitstreamError(f"bitstream truncated: {len(data)} bytes, header needs {HEADER_SIZE}")
        magic, version, flags, width, height, model_id, z_len, y_len, bypass_len = HEADER_STRUCT.unpack_from(data)
        if magic != BITSTREAM_MAGIC:
            raise BitstreamError(f"bad bitstream magic {magic!r}")
        if version != BITSTREAM_VERSION:
            raise BitstreamError(f"unsupported bitstream version {version}")
        if flags & ~MODE_MASK:
            raise BitstreamError(f"reserved flag bits set: 0x{flags:02x}")
        if width == 0 or height == 0:
            raise BitstreamError(f"invalid image dimensions {width}x{height}")
        return cls(width, height, model_id, z_len, y_len, bypass_len, flags, version, magic)

    @property
    def quant_mode(self) -> str:
        return QUANT_MODES[self.flags & MODE_MASK]

    @property
    def total_size(self) -> int:
        return HEADER_SIZE + self.z_stream_len + self.y_stream_len + self.bypass_len

    def validate_length(self, actual: int) -> None:
        if actual != self.total_size:
            raise BitstreamError(
                f"container is {actual} bytes but header declares {self.total_size} "
                f"(z={self.z_stream_len}, y={self.y_stream_len}, bypass={self.bypass_len})"
            )


@dataclass(frozen=True)
class HyperParams:
    """Entropy parameters of y: mu = mu_int * s_mu and the sigma bin per element."""

    mu: np.ndarray
    sigma_bins: np.ndarray
    mu_int: np.ndarray


@dataclass(frozen=True)
class LatentSymbols:
    """Everything the encoder derives from one image before entropy coding."""

    width: int
    height: int
    z_hat: np.ndarray
    z_symbols: np.ndarray
    residual: np.ndarray
    params: HyperParams

    @property
    def y_hat(self) -> np.ndarray:
        return self.residual + self.params.mu


@dataclass(frozen=True)
class DecodedSymbols:
    header: BitstreamHeader
    z_hat: np.ndarray
    residual: np.ndarray
    params: HyperParams


# Padding


def _padded(size: int, multiple: int) -> int:
    return -(-size // multiple) * multiple


def pad_replicate_array(x: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    _, _, h, w = x.shape
    pad_h = _padded(h, multiple) - h
    pad_w = _padded(w, multiple) - w
    if pad_h == 0 and pad_w == 0:
        return np.asarray(x, dtype=np.float64)
    return np.pad(np.asarray(x, dtype=np.float64), ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), mode="edge")


def pad_replicate(x: Tensor, multiple: int = PAD_MULTIPLE) -> Tensor:
    """Pad right and bottom by edge replication to the next multiple."""
    if multiple < 1:
        raise ShapeMismatchError(f"padding multiple must be positive, got {multiple}")
    padded = pad_replicate_array(x.data, multiple)
    return x if padded is x.data else Tensor(padded)


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left height x width region."""
    _, _, h, w = x.dims
    if height > h or width > w or height < 1 or width < 1:
        raise ShapeMismatchError(f"cannot crop {h}x{w} to {height}x{width}")
    return Tensor(x.data[:, :, :height, :width])


def latent_shapes(config: ChannelConfig, height: int, width: int) -> Dict[str, Tuple[int, ...]]:
    """Padded input, y and z dims for an image of the given size."""
    ph, pw = _padded(height, PAD_MULTIPLE), _padded(width, PAD_MULTIPLE)
    return {
        "padded": (1, 3, ph, pw),
        "y": (1, config.latent_channels, ph // LATENT_STRIDE, pw // LATENT_STRIDE),
        "z": (1, config.hyper_channels, ph // HYPER_STRIDE, pw // HYPER_STRIDE),
    }


# Hyper decoder


@timed("hyper decode")
def hyper_decode_params(z_hat: np.ndarray, model: ModelWeights) -> HyperParams:
    """
    Entropy parameters of y from the integer hyper-latent.

    h_s runs entirely in integer arithmetic; mu is the single float product
    mu_int * s_mu and the sigma bin is a threshold count on the raw integer
    sigma output, so encoder and decoder agree bit for bit.
    """
    raw = hyper_synthesis_int(model, np.asarray(z_hat, dtype=np.int64))
    m = model.config.latent_channels
    mu_int = raw[:, :m]
    sigma_int = raw[:, m:]
    mu = mu_int.astype(np.float64) * model.mu_scale
    bins = np.searchsorted(model.sigma_thresholds, sigma_int, side="left").astype(np.int64)
    return HyperParams(mu, bins, mu_int)


# Stream coding


def _z_selector(model: ModelWeights, z_shape: Tuple[int, ...]):
    plane = int(z_shape[2] * z_shape[3])
    tables = model.z_tables
    return lambda i: tables[i // plane]


def _y_selector(sigma_bins: np.ndarray):
    cdfs = default_scale_table().cdfs
    flat = sigma_bins.reshape(-1).tolist()
    return lambda i: cdfs[flat[i]]


def _check_image(x: Tensor) -> Tuple[int, int]:
    n, c, h, w = x.dims
    if n != 1 or c != 3:
        raise ShapeMismatchError(f"encode_image expects dims (1, 3, H, W), got {x.dims}")
    if h < 1 or w < 1:
        raise ShapeMismatchError(f"image must be at least 1x1, got {h}x{w}")
    if h > MAX_DIMENSION or w > MAX_DIMENSION:
        raise DimensionOverflowError(f"image {w}x{h} exceeds the 32-bit container fields")
    return h, w


def analyze_image(x: Tensor, model: ModelWeights) -> LatentSymbols:
    """Transforms and quantization of one image, up to the symbols to be coded."""
    height, width = _check_image(x)
    padded = pad_replicate_array(x.data)
    y = analysis_transform(model, padded)
    z = hyper_analysis_transform(model, y)
    z_hat = round_half_away(z).astype(np.int64)
    z_symbols = z_hat - model.z_offsets.reshape(1, -1, 1, 1)
    params = hyper_decode_params(z_hat, model)
    residual = round_half_away(y - params.mu).astype(np.int64)
    return LatentSymbols(width, height, z_hat, z_symbols, residual, params)


def encode_symbols(symbols: LatentSymbols, model: ModelWeights) -> bytes:
    """Range-code the z and y symbols concurrently and assemble the container."""
    z_stream = symbolize(symbols.z_symbols)
    y_stream = symbolize(symbols.residual)
    z_select = _z_selector(model, symbols.z_symbols.shape)
    y_select = _y_selector(symbols.params.sigma_bins)

    with ThreadPoolExecutor(max_workers=2) as executor:
        z_future = executor.submit(range_encode, z_stream, z_select)
        y_future = executor.submit(range_encode, y_stream, y_select)
        z_bytes = z_future.result()
        y_bytes = y_future.result()
    bypass = bypass_encode(np.concatenate([z_stream.escaped, y_stream.escaped]), BYPASS_BITS)
    if len(bypass):
        logger.warning(f"{z_stream.escape_count + y_stream.escape_count} values escaped to the bypass stream")

    header = BitstreamHeader(
        symbols.width,
        symbols.height,
        model.model_id,
        len(z_bytes),
        len(y_bytes),
        len(bypass),
        flags=QUANT_MODES.index(model.quant_mode),
    )
    logger.debug(f"Stream sizes: z={len(z_bytes)} y={len(y_bytes)} bypass={len(bypass)} bytes")
    return header.pack() + z_bytes + y_bytes + bypass


def encode_image(x: Tensor, model: ModelWeights) -> bytes:
    """Compress a (1, 3, H, W) image with values in [0, 1]."""
    with PerformanceTimer(f"Encode {x.dims[3]}x{x.dims[2]}", quiet=True):
        return encode_symbols(analyze_image(x, model), model)


def symbol_cost_bits(symbols: LatentSymbols, model: ModelWeights) -> float:
    """Ideal code length of both latents under the coder's own tables."""
    z_bits = quantized_cross_entropy(symbolize(symbols.z_symbols), _z_selector(model, symbols.z_symbols.shape))
    y_bits = quantized_cross_entropy(symbolize(symbols.residual), _y_selector(symbols.params.sigma_bins))
    return z_bits + y_bits


def _take_escapes(bypass: bytes, offset: int, count: int) -> Tuple[np.ndarray, int]:
    size = count * BYPASS_BITS // 8
    if offset + size > len(bypass):
        raise BitstreamError(f"bypass stream too short for {count} escaped values")
    return bypass_decode(bypass[offset : offset + size], BYPASS_BITS, count), offset + size


def decode_symbols(data: bytes, model: ModelWeights) -> DecodedSymbols:
    """Parse the container and recover z_hat, the residuals and the entropy parameters."""
    header = BitstreamHeader.unpack(data)
    header.validate_length(len(data))
    if header.model_id != model.model_id:
        raise ModelMismatchError(
            f"bitstream was encoded with model {header.model_id:016x}, loaded model is {model.model_id:016x}"
        )
    if header.quant_mode != model.quant_mode:
        raise ModelMismatchError(f"bitstream mode {header.quant_mode} != model mode {model.quant_mode}")

    shapes = latent_shapes(model.config, header.height, header.width)
    z_shape, y_shape = shapes["z"], shapes["y"]
    z_start = HEADER_SIZE
    y_start = z_start + header.z_stream_len
    bypass_start = y_start + header.y_stream_len
    z_bytes = data[z_start:y_start]
    y_bytes = data[y_start:bypass_start]
    bypass = data[bypass_start:]
    escape = default_scale_table().cdfs[0].a_max + 1

    z_values = range_decode(z_bytes, _z_selector(model, z_shape), int(np.prod(z_shape)))
    z_escaped, offset = _take_escapes(bypass, 0, int((z_values == escape).sum()))
    z_symbols = desymbolize(SymbolStream(z_values, z_escaped)).reshape(z_shape)
    z_hat = z_symbols + model.z_offsets.reshape(1, -1, 1, 1)

    params = hyper_decode_params(z_hat, model)
    y_values = range_decode(y_bytes, _y_selector(params.sigma_bins), int(np.prod(y_shape)))
    y_count = int((y_values == escape).sum())
    if offset + y_count * BYPASS_BITS // 8 != len(bypass):
        raise BitstreamError(f"bypass stream length {len(bypass)} disagrees with escape count")
    y_escaped, _ = _take_escapes(bypass, offset, y_count)
    residual = desymbolize(SymbolStream(y_values, y_escaped)).reshape(y_shape)
    return DecodedSymbols(header, z_hat, residual, params)


def reconstruct(decoded: DecodedSymbols, model: ModelWeights) -> Tensor:
    y_hat = decoded.residual + decoded.params.mu
    x_hat = np.clip(synthesis_transform(model, y_hat), 0.0, 1.0)
    return Tensor(x_hat[:, :, : decoded.header.height, : decoded.header.width])


def decode_image(data: bytes, model: ModelWeights) -> Tensor:
    """Decompress a LICP container into a (1, 3, H, W) image in [0, 1]."""
    with PerformanceTimer("Decode", quiet=True):
        return reconstruct(decode_symbols(data, model), model)


def bitstream_info(data: bytes) -> Dict[str, Any]:
    """Header fields, stream sizes and bits per pixel of a container."""
    header = BitstreamHeader.unpack(data)
    header.validate_length(len(data))
    return {
        "magic": header.magic.decode("ascii"),
        "version": header.version,
        "quant_mode": header.quant_mode,
        "width": header.width,
        "height": header.height,
        "model_id": f"{header.model_id:016x}",
        "z_stream_len": header.z_stream_len,
        "y_stream_len": header.y_stream_len,
        "bypass_len": header.bypass_len,
        "total_bytes": len(data),
        "bpp": 8.0 * len(data) / (header.width * header.height),
    }


# Batch API


def encode_batch(images: Sequence[Tensor], model: ModelWeights, workers: int = 1) -> List[bytes]:
    """Encode many images against one shared model; output order follows input order."""
    if workers < 1:
        raise LicCodecError(f"workers must be >= 1, got {workers}")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda img: encode_image(img, model), images))


def decode_batch(streams: Sequence[Union[bytes, bytearray]], model: ModelWeights, workers: int = 1) -> List[Tensor]:
    if workers < 1:
        raise LicCodecError(f"workers must be >= 1, got {workers}")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda data: decode_image(bytes(data), model), streams))
