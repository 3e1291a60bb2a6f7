"""
Entropy coding for the LIC codec.

Discretized-Gaussian probability modeling, 16-bit integer CDF tables, a
deterministic carry-propagating range coder and fixed-width bypass packing
for escaped outliers. Tables are immutable; encoder and decoder instances are
single-threaded state machines.
"""

import bisect
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np
from scipy.special import ndtr

from utils import LicCodecError

logger = logging.getLogger(__name__)

PRECISION = 16
TOTAL = 1 << PRECISION
A_MAX = 255
SCALE_BINS = 64
SIGMA_MIN = 0.11
SIGMA_MAX = 256.0
BYPASS_BITS = 16

RANGE_TOP = 1 << 24
RANGE_INIT = 0xFFFFFFFF
FLUSH_SHIFTS = 5


class EntropyCodingError(LicCodecError):
    """Raised for invalid probability models or symbol streams."""

    pass


class RangeDecodeError(EntropyCodingError):
    """Raised when a range-coded stream is truncated or corrupt."""

    pass


class BypassOverflowError(EntropyCodingError):
    """Raised when a value does not fit the bypass field width."""

    pass


# Probability model


def discretized_gaussian_pmf(mu: float, sigma: float, symbol: int) -> float:
    """
    Probability mass of integer ``symbol`` under N(mu, sigma^2) integrated over
    [symbol - 0.5, symbol + 0.5]. Evaluated on the lower tail for accuracy,
    which also makes (0, sigma, +k) and (0, sigma, -k) bit-identical.
    """
    if not sigma > 0:
        raise EntropyCodingError(f"sigma must be positive, got {sigma}")
    d = abs(symbol - mu)
    return float(ndtr((0.5 - d) / sigma) - ndtr((-0.5 - d) / sigma))


def _zero_mean_pmf(sigma: float, a_max: int) -> Tuple[np.ndarray, float]:
    k = np.arange(0, a_max + 1, dtype=np.float64)
    upper = ndtr((0.5 - k) / sigma) - ndtr((-0.5 - k) / sigma)
    pmf = np.concatenate([upper[:0:-1], upper])
    escape = 2.0 * float(ndtr(-(a_max + 0.5) / sigma))
    return pmf, escape


@dataclass(frozen=True)
class CdfTable:
    """
    Cumulative frequency table over {-a_max..a_max, escape}.

    ``cum`` has alphabet_size + 1 entries with cum[0] = 0, cum[-1] = 2**16
    and strictly increasing values. Value v maps to index v + a_max; the
    escape symbol is value a_max + 1 (the last index).
    """

    cum: np.ndarray
    a_max: int = field(init=False)

    def __post_init__(self) -> None:
        cum = np.array(self.cum, dtype=np.int64)
        if cum.ndim != 1 or len(cum) < 3 or len(cum) % 2 != 1:
            raise EntropyCodingError(f"CDF must have 2*a_max + 3 entries, got {len(cum)}")
        if cum[0] != 0 or cum[-1] != TOTAL:
            raise EntropyCodingError(f"CDF must start at 0 and end at {TOTAL}, got {cum[0]}..{cum[-1]}")
        if not (np.diff(cum) > 0).all():
            raise EntropyCodingError("CDF must be strictly increasing")
        cum.setflags(write=False)
        object.__setattr__(self, "cum", cum)
        object.__setattr__(self, "a_max", (len(cum) - 3) // 2)

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "CdfTable":
        """Build a table from per-symbol counts that sum to 2**16."""
        arr = np.asarray(counts, dtype=np.int64)
        return cls(np.concatenate([[0], np.cumsum(arr)]))

    @property
    def alphabet_size(self) -> int:
        return len(self.cum) - 1

    @property
    def escape_index(self) -> int:
        return self.alphabet_size - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.cum)

    @cached_property
    def cum_list(self) -> List[int]:
        return [int(c) for c in self.cum]

    def index_of(self, value: int) -> int:
        index = int(value) + self.a_max
        if not 0 <= index < self.alphabet_size:
            raise EntropyCodingError(f"value {value} outside alphabet of a_max={self.a_max}")
        return index

    def bits(self, value: int) -> float:
        """Ideal code length of ``value`` under this table."""
        index = self.index_of(value)
        return -math.log2((self.cum_list[index + 1] - self.cum_list[index]) / TOTAL)


def build_cdf_table(sigma: float, a_max: int = A_MAX, precision: int = PRECISION) -> CdfTable:
    """
    Quantize the zero-mean discretized Gaussian to a 16-bit CDF.

    Every symbol receives at least one count; the escape symbol carries all
    mass beyond +-a_max. The rounding deficit or surplus is absorbed by the
    largest-mass symbol (lowest index on ties); when that symbol cannot give
    up enough counts the next largest continues.
    """
    if precision != PRECISION:
        raise EntropyCodingError(f"only {PRECISION}-bit tables are supported, got {precision}")
    if not sigma > 0:
        raise EntropyCodingError(f"sigma must be positive, got {sigma}")
    if 2 * a_max + 2 > TOTAL:
        raise EntropyCodingError(f"alphabet for a_max={a_max} does not fit {precision}-bit precision")

    pmf, escape = _zero_mean_pmf(float(sigma), a_max)
    probabilities = np.append(pmf, escape)
    counts = np.maximum(1, np.floor(probabilities * TOTAL + 0.5)).astype(np.int64)

    diff = TOTAL - int(counts.sum())
    while diff != 0:
        index = int(np.argmax(counts))
        if diff > 0:
            counts[index] += diff
            diff = 0
        else:
            take = min(-diff, int(counts[index]) - 1)
            if take == 0:
                raise EntropyCodingError(f"cannot normalise CDF for sigma={sigma}")
            counts[index] -= take
            diff += take

    return CdfTable.from_counts(counts)


@dataclass(frozen=True)
class ScaleTable:
    """Log-spaced sigma bins with one zero-mean CdfTable per bin."""

    bins: np.ndarray
    cdfs: Tuple[CdfTable, ...]

    def __post_init__(self) -> None:
        bins = np.array(self.bins, dtype=np.float64)
        if bins.ndim != 1 or len(bins) == 0 or not (np.diff(bins) > 0).all():
            raise EntropyCodingError("scale bins must be a non-empty strictly increasing vector")
        if len(self.cdfs) != len(bins):
            raise EntropyCodingError(f"{len(bins)} bins but {len(self.cdfs)} CDF tables")
        bins.setflags(write=False)
        object.__setattr__(self, "bins", bins)

    @classmethod
    def build(
        cls,
        sigma_min: float = SIGMA_MIN,
        sigma_max: float = SIGMA_MAX,
        count: int = SCALE_BINS,
        a_max: int = A_MAX,
    ) -> "ScaleTable":
        bins = np.exp(np.linspace(math.log(sigma_min), math.log(sigma_max), count))
        cdfs = tuple(build_cdf_table(float(s), a_max) for s in bins)
        logger.debug(f"Built scale table: {count} bins in [{sigma_min}, {sigma_max}], a_max={a_max}")
        return cls(bins, cdfs)

    def __len__(self) -> int:
        return len(self.bins)


@lru_cache(maxsize=None)
def default_scale_table() -> ScaleTable:
    """The shared 64-bin table used by the codec."""
    return ScaleTable.build()


def sigma_to_bin(sigma: Union[float, np.ndarray], table: ScaleTable) -> Union[int, np.ndarray]:
    """Smallest bin index whose sigma >= input, clamped to the table."""
    index = np.minimum(np.searchsorted(table.bins, sigma, side="left"), len(table.bins) - 1)
    if np.ndim(sigma) == 0:
        return int(index)
    return index.astype(np.int64)


# Symbol streams and escapes


@dataclass(frozen=True)
class SymbolStream:
    """
    Values in [-a_max, a_max], with a_max + 1 marking an escaped position.
    ``escaped`` holds the raw values of escaped positions, in stream order.
    """

    symbols: np.ndarray
    escaped: np.ndarray
    a_max: int = A_MAX

    def __post_init__(self) -> None:
        symbols = np.array(self.symbols, dtype=np.int64).reshape(-1)
        escaped = np.array(self.escaped, dtype=np.int64).reshape(-1)
        if len(symbols) and (symbols.min() < -self.a_max or symbols.max() > self.a_max + 1):
            raise EntropyCodingError(f"symbols outside [-{self.a_max}, {self.a_max + 1}]")
        if int((symbols == self.a_max + 1).sum()) != len(escaped):
            raise EntropyCodingError("escape markers and escaped values disagree in count")
        symbols.setflags(write=False)
        escaped.setflags(write=False)
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "escaped", escaped)

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def escape_count(self) -> int:
        return len(self.escaped)


def symbolize(values: Union[np.ndarray, Sequence[int]], a_max: int = A_MAX) -> SymbolStream:
    """Split integer values into in-alphabet symbols and escaped raw values."""
    arr = np.asarray(values, dtype=np.int64).reshape(-1)
    outliers = np.abs(arr) > a_max
    limit = (1 << (BYPASS_BITS - 1)) - 1
    if outliers.any() and np.abs(arr[outliers]).max() > limit:
        raise BypassOverflowError(f"escaped value magnitude exceeds {limit}")
    symbols = np.where(outliers, a_max + 1, arr)
    if outliers.any():
        logger.debug(f"{int(outliers.sum())} of {len(arr)} values escaped to bypass")
    return SymbolStream(symbols, arr[outliers], a_max)


def desymbolize(stream: SymbolStream) -> np.ndarray:
    """Inverse of symbolize: restore escaped positions from the raw values."""
    values = stream.symbols.copy()
    values[values == stream.a_max + 1] = stream.escaped
    return values


CdfSelector = Union[CdfTable, Callable[[int], CdfTable]]


def _selector(cdf_for: CdfSelector) -> Callable[[int], CdfTable]:
    if isinstance(cdf_for, CdfTable):
        return lambda _i: cdf_for
    return cdf_for


def _symbol_values(symbols: Union[SymbolStream, np.ndarray, Sequence[int]]) -> np.ndarray:
    if isinstance(symbols, SymbolStream):
        return symbols.symbols
    return np.asarray(symbols, dtype=np.int64).reshape(-1)


def quantized_cross_entropy(symbols: Union[SymbolStream, np.ndarray, Sequence[int]], cdf_for: CdfSelector) -> float:
    """Code length in bits of the stream under its own quantized tables."""
    select = _selector(cdf_for)
    return math.fsum(select(i).bits(int(v)) for i, v in enumerate(_symbol_values(symbols)))


# Range coder


class RangeEncoder:
    """
    Carry-propagating range encoder (64-bit low with 33 bits used, 32-bit range).

    The first output byte of this scheme is always zero and is not emitted,
    so flushing costs 4 bytes.
    """

    def __init__(self) -> None:
        self.low = 0
        self.range = RANGE_INIT
        self._cache = 0
        self._cache_size = 1
        self._skip_first = True
        self._out = bytearray()
        self._finished = False

    def _emit(self, byte: int) -> None:
        if self._skip_first:
            self._skip_first = False
            return
        self._out.append(byte & 0xFF)

    def _shift_low(self) -> None:
        if (self.low & 0xFFFFFFFF) < 0xFF000000 or self.low >= (1 << 32):
            carry = self.low >> 32
            temp = self._cache
            while True:
                self._emit(temp + carry)
                temp = 0xFF
                self._cache_size -= 1
                if self._cache_size == 0:
                    break
            self._cache = (self.low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def encode(self, cum_low: int, freq: int) -> None:
        r = self.range >> PRECISION
        self.low += r * cum_low
        self.range = r * freq
        while self.range < RANGE_TOP:
            self.range <<= 8
            self._shift_low()

    def encode_symbol(self, value: int, table: CdfTable) -> None:
        cum = table.cum_list
        index = table.index_of(value)
        self.encode(cum[index], cum[index + 1] - cum[index])

    def finish(self) -> bytes:
        if not self._finished:
            for _ in range(FLUSH_SHIFTS):
                self._shift_low()
            self._finished = True
        return bytes(self._out)


class RangeDecoder:
    """Decoder matching RangeEncoder; every inconsistency raises RangeDecodeError."""

    def __init__(self, data: bytes) -> None:
        self.data = bytes(data)
        if len(self.data) < FLUSH_SHIFTS - 1:
            raise RangeDecodeError(f"range-coded stream too short: {len(self.data)} bytes")
        self.code = int.from_bytes(self.data[:4], "big")
        self.range = RANGE_INIT
        self.pos = 4

    def _next_byte(self) -> int:
        if self.pos >= len(self.data):
            raise RangeDecodeError(f"read past end of stream at byte {self.pos}")
        byte = self.data[self.pos]
        self.pos += 1
        return byte

    def decode_symbol(self, table: CdfTable) -> int:
        if self.code >= self.range:
            raise RangeDecodeError(f"corrupt stream: code exceeds range at byte {self.pos}")
        cum = table.cum_list
        r = self.range >> PRECISION
        target = self.code // r
        if target >= TOTAL:
            raise RangeDecodeError(f"corrupt stream: target {target} out of range at byte {self.pos}")
        index = bisect.bisect_right(cum, target) - 1
        self.code -= r * cum[index]
        self.range = r * (cum[index + 1] - cum[index])
        while self.range < RANGE_TOP:
            self.range <<= 8
            self.code = (self.code << 8) | self._next_byte()
        return index - table.a_max

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise RangeDecodeError(f"{len(self.data) - self.pos} unconsumed trailing bytes in stream")


def range_encode(symbols: Union[SymbolStream, np.ndarray, Sequence[int]], cdf_for: CdfSelector) -> bytes:
    """
    Range-code symbol values; cdf_for(i) selects the table for position i.

    Escaped positions are coded as the escape symbol; their raw values travel
    separately through bypass coding.
    """
    select = _selector(cdf_for)
    encoder = RangeEncoder()
    for i, value in enumerate(_symbol_values(symbols).tolist()):
        encoder.encode_symbol(value, select(i))
    return encoder.finish()


def range_decode(data: bytes, cdf_for: CdfSelector, count: int) -> np.ndarray:
    """
    Decode exactly ``count`` symbol values as an int64 array.

    This is the ``symbols`` field of a SymbolStream: escape markers come back
    as a_max + 1 and the raw values they stand for live in the bypass stream,
    so ``SymbolStream(range_decode(...), bypass_decode(...))`` rebuilds it.
    """
    select = _selector(cdf_for)
    decoder = RangeDecoder(data)
    values = np.empty(count, dtype=np.int64)
    for i in range(count):
        values[i] = decoder.decode_symbol(select(i))
    decoder.finish()
    return values


# Bypass coding


def bypass_encode(values: Union[np.ndarray, Sequence[int]], bits_per_value: int = BYPASS_BITS) -> bytes:
    """Pack values as fixed-width big-endian two's complement, zero-padded to a byte."""
    if bits_per_value < 1 or bits_per_value > 64:
        raise BypassOverflowError(f"bits_per_value must be in [1, 64], got {bits_per_value}")
    arr = [int(v) for v in np.asarray(values, dtype=np.int64).reshape(-1)]
    lo = -(1 << (bits_per_value - 1))
    hi = (1 << (bits_per_value - 1)) - 1
    for v in arr:
        if not lo <= v <= hi:
            raise BypassOverflowError(f"value {v} does not fit {bits_per_value}-bit two's complement")
    if not arr:
        return b""
    if bits_per_value % 8 == 0:
        return np.asarray(arr, dtype=f">i{bits_per_value // 8}").tobytes()

    mask = (1 << bits_per_value) - 1
    acc = 0
    for v in arr:
        acc = (acc << bits_per_value) | (v & mask)
    total_bits = len(arr) * bits_per_value
    pad = -total_bits % 8
    return (acc << pad).to_bytes((total_bits + pad) // 8, "big")


def bypass_decode(data: bytes, bits_per_value: int, count: int) -> np.ndarray:
    """Inverse of bypass_encode; the byte length must match ``count`` exactly."""
    if bits_per_value < 1 or bits_per_value > 64:
        raise BypassOverflowError(f"bits_per_value must be in [1, 64], got {bits_per_value}")
    expected = (count * bits_per_value + 7) // 8
    if len(data) != expected:
        raise RangeDecodeError(f"bypass stream holds {len(data)} bytes, expected {expected} for {count} values")
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    if bits_per_value % 8 == 0:
        return np.frombuffer(data, dtype=f">i{bits_per_value // 8}").astype(np.int64)

    pad = -(count * bits_per_value) % 8
    acc = int.from_bytes(data, "big") >> pad
    mask = (1 << bits_per_value) - 1
    sign = 1 << (bits_per_value - 1)
    out = np.empty(count, dtype=np.int64)
    for i in range(count - 1, -1, -1):
        raw = acc & mask
        out[i] = raw - (1 << bits_per_value) if raw & sign else raw
        acc >>= bits_per_value
    return out
