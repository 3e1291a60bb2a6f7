"""
Deterministic inference kernels for the LIC codec.

Convolution, transposed convolution and activations in float64, plus the
int8 integer path (int64 accumulation, per-channel requantization) that the
hyper-synthesis transform must run through for bit-exact decoding.

All kernels are pure functions. Weights are laid out (out_c, in_c, k, k) for
both convolution and transposed convolution.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np

from utils import LicCodecError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("none", "relu", "relu6")
LAYER_KINDS = ("conv", "deconv")
INT8_MIN = -128
INT8_MAX = 127
INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1
ACCUMULATOR_LIMIT = 2**30
MAX_SHIFT = 62

GELU_STANDARD = (math.sqrt(2.0 / math.pi), 0.044715)
GELU_LITERAL = (math.sqrt(math.pi / 2.0), 0.004715)


class ShapeMismatchError(LicCodecError):
    """Raised when a tensor or weight shape does not match its layer spec."""

    pass


class TensorValueError(LicCodecError):
    """Raised when tensor values are invalid (non-finite, empty input)."""

    pass


ArrayLike = Union[np.ndarray, Sequence[float], float]


@dataclass(frozen=True)
class Tensor:
    """Dense 4-D float tensor (n, c, h, w); immutable after construction."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr is self.data and arr.flags.writeable:
            arr = arr.copy()
        if arr.ndim != 4:
            raise ShapeMismatchError(f"Tensor must be 4-D (n, c, h, w), got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise TensorValueError("Tensor contains NaN or Inf values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        n, c, h, w = self.data.shape
        return int(n), int(c), int(h), int(w)

    @classmethod
    def zeros(cls, n: int, c: int, h: int, w: int) -> "Tensor":
        return cls(np.zeros((n, c, h, w), dtype=np.float64))


@dataclass(frozen=True)
class QuantTensor:
    """
    Symmetric integer tensor: value = int_value * scale, zero point fixed at 0.

    ``scale`` is a float for activations or a per-output-channel vector for
    weights. ``data`` is int8 for ordinary tensors; the wide variant produced
    by the final hyper-synthesis layer holds int32.
    """

    data: np.ndarray
    scale: Union[float, np.ndarray]
    zero_point: int = 0

    def __post_init__(self) -> None:
        if self.zero_point != 0:
            raise TensorValueError("Only symmetric quantization (zero_point = 0) is supported")
        scale = self.scale
        if isinstance(scale, np.ndarray):
            if not (scale > 0).all():
                raise TensorValueError("Quantization scales must be positive")
            scale = scale.astype(np.float64, copy=True)
            scale.setflags(write=False)
            object.__setattr__(self, "scale", scale)
        elif not float(scale) > 0:
            raise TensorValueError(f"Quantization scale must be positive, got {scale}")
        if self.data.dtype not in (np.int8, np.int32):
            raise TensorValueError(f"QuantTensor data must be int8 or int32, got {self.data.dtype}")
        data = self.data.copy() if self.data.flags.writeable else self.data
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(int(d) for d in self.data.shape)

    def dequantize(self) -> np.ndarray:
        """Return int_value * scale as float64 (per-channel scales broadcast on axis 0)."""
        values = self.data.astype(np.float64)
        if isinstance(self.scale, np.ndarray):
            shape = (-1,) + (1,) * (values.ndim - 1)
            return values * self.scale.reshape(shape)
        return values * float(self.scale)


@dataclass(frozen=True)
class LayerSpec:
    """Structural description of one (transposed) convolution layer."""

    kind: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    activation: str = "none"
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ShapeMismatchError(f"Layer {self.name or '?'}: unknown kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ShapeMismatchError(f"Layer {self.name or '?'}: unknown activation {self.activation!r}")
        if self.kernel < 1 or self.stride not in (1, 2):
            raise ShapeMismatchError(
                f"Layer {self.name or '?'}: kernel must be >= 1 and stride in {{1, 2}}, "
                f"got kernel={self.kernel} stride={self.stride}"
            )
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeMismatchError(
                f"Layer {self.name or '?'}: channel counts must be positive, "
                f"got in={self.in_channels} out={self.out_channels}"
            )

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    def output_hw(self, h: int, w: int) -> Tuple[int, int]:
        """Spatial output dims: ceil(h/s) for conv, s*h for deconv."""
        if self.kind == "conv":
            return -(-h // self.stride), -(-w // self.stride)
        return h * self.stride, w * self.stride


@dataclass(frozen=True)
class Requant:
    """
    Per-output-channel requantization: out = sat(round((acc + b) * m / 2**n)).

    ``lo``/``hi`` are the saturation bounds, which also realise ReLU (lo = 0)
    and ReLU6 (hi = round(6 / out_scale)) in the integer domain.
    """

    multiplier: np.ndarray
    shift: np.ndarray
    out_scale: float
    lo: int = INT8_MIN
    hi: int = INT8_MAX

    def __post_init__(self) -> None:
        m = np.asarray(self.multiplier, dtype=np.int64).copy()
        n = np.asarray(self.shift, dtype=np.int64).copy()
        if m.shape != n.shape or m.ndim != 1:
            raise ShapeMismatchError(f"Requant multiplier/shift shapes differ: {m.shape} vs {n.shape}")
        if (m < 0).any() or (m >= 2**31).any() or (n < 0).any() or (n > MAX_SHIFT).any():
            raise TensorValueError("Requant multiplier must lie in [0, 2^31) and shift in [0, 62]")
        m.setflags(write=False)
        n.setflags(write=False)
        object.__setattr__(self, "multiplier", m)
        object.__setattr__(self, "shift", n)


# Rounding and requantization helpers


def round_half_away(x: Any) -> Any:
    """Round half away from zero, the single rounding rule used everywhere."""
    arr = np.asarray(x, dtype=np.float64)
    rounded = np.sign(arr) * np.floor(np.abs(arr) + 0.5)
    if np.ndim(x) == 0 and not isinstance(x, np.ndarray):
        return float(rounded)
    return rounded


def requant_multiplier(ratio: float) -> Tuple[int, int]:
    """
    Fixed-point (m, n) with m / 2**n approximating ``ratio``.

    For ratios down to 2**-31, m lies in [2**30, 2**31) and the relative error
    is below 2**-30. Smaller ratios use the maximum shift with a smaller m.
    """
    if not ratio > 0 or not math.isfinite(ratio):
        raise TensorValueError(f"Requantization ratio must be positive and finite, got {ratio}")
    frac, exp = math.frexp(ratio)
    m = int(round_half_away(frac * 2.0**31))
    if m == 2**31:
        m //= 2
        exp += 1
    n = 31 - exp
    if n < 0:
        raise TensorValueError(f"Requantization ratio {ratio} too large for a 31-bit multiplier")
    if n > MAX_SHIFT:
        m = int(round_half_away(ratio * 2.0**MAX_SHIFT))
        n = MAX_SHIFT
    return m, n


def requantize(acc: np.ndarray, multiplier: np.ndarray, shift: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """
    Exact integer requantization of (n, c, h, w) int64 accumulators.

    Computes sat(round_half_away(acc * m[c] / 2**n[c])) using only int64
    operations; |acc| < 2**31.5 and m < 2**31 keep every product below 2**63.
    """
    shape = (1, -1, 1, 1)
    m = multiplier.astype(np.int64).reshape(shape)
    n = shift.astype(np.int64).reshape(shape)
    prod = acc.astype(np.int64) * m
    half = np.where(n > 0, np.left_shift(np.int64(1), np.maximum(n - 1, 0)), 0)
    magnitude = np.right_shift(np.abs(prod) + half, n)
    result = np.where(prod < 0, -magnitude, magnitude)
    return np.clip(result, lo, hi)


def check_accumulator_bound(spec: LayerSpec) -> None:
    """
    Assert that int8 x int8 accumulation over the layer's receptive field
    stays below 2**30, so int32 accumulators can never overflow.
    """
    worst = spec.kernel * spec.kernel * spec.in_channels * 128 * 128
    if worst >= ACCUMULATOR_LIMIT:
        raise ShapeMismatchError(
            f"Layer {spec.name or '?'}: accumulator bound {worst} exceeds 2^30 "
            f"(kernel={spec.kernel}, in_channels={spec.in_channels})"
        )


def quantize_tensor(x: Union[Tensor, np.ndarray], scale: float) -> QuantTensor:
    """Quantize a float activation to int8 with a per-tensor scale."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    q = np.clip(round_half_away(data / float(scale)), INT8_MIN, INT8_MAX).astype(np.int8)
    return QuantTensor(q, float(scale))


# Shape checks


def _check_layer(x_shape: Tuple[int, ...], w_shape: Tuple[int, ...], bias_len: int, spec: LayerSpec) -> None:
    label = spec.name or spec.kind
    if len(x_shape) != 4:
        raise ShapeMismatchError(f"Layer {label}: input must be 4-D, got dims {tuple(x_shape)}")
    if tuple(w_shape) != spec.weight_shape:
        raise ShapeMismatchError(f"Layer {label}: weight dims {tuple(w_shape)} != expected {spec.weight_shape}")
    if x_shape[1] != spec.in_channels:
        raise ShapeMismatchError(
            f"Layer {label}: input has {x_shape[1]} channels, layer expects {spec.in_channels} "
            f"(input dims {tuple(x_shape)})"
        )
    if bias_len != spec.out_channels:
        raise ShapeMismatchError(f"Layer {label}: bias length {bias_len} != out_channels {spec.out_channels}")


# Array-level kernels (shared by the float and the integer path)


def conv2d_array(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """
    'Same'-padded convolution without bias; returns (n, out_c, ceil(h/s), ceil(w/s)).

    Accumulates one kernel tap at a time; for int64 inputs the result is exact
    and independent of summation order.
    """
    n, _, h, wd = x.shape
    out_c, _, k, _ = w.shape
    left = (k - 1) // 2
    right = k - 1 - left
    xp = np.pad(x, ((0, 0), (0, 0), (left, right), (left, right)))
    oh = (h - 1) // stride + 1
    ow = (wd - 1) // stride + 1
    out = np.zeros((n, oh, ow, out_c), dtype=np.result_type(x, w))
    for a in range(k):
        for b in range(k):
            patch = xp[:, :, a : a + stride * (oh - 1) + 1 : stride, b : b + stride * (ow - 1) + 1 : stride]
            out += np.tensordot(patch, w[:, :, a, b], axes=([1], [1]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def deconv2d_array(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """
    Transposed convolution without bias, cropped to exactly (stride*h, stride*w).

    The full (h-1)*s + k output is cropped starting at (k-1)//2, which is the
    output padding that makes a stride-2 layer exactly double the resolution.
    """
    n, _, h, wd = x.shape
    out_c, _, k, _ = w.shape
    full_h = (h - 1) * stride + k
    full_w = (wd - 1) * stride + k
    p = (k - 1) // 2
    target_h = stride * h
    target_w = stride * wd
    alloc_h = max(full_h, p + target_h)
    alloc_w = max(full_w, p + target_w)
    out = np.zeros((n, alloc_h, alloc_w, out_c), dtype=np.result_type(x, w))
    for a in range(k):
        for b in range(k):
            contrib = np.tensordot(x, w[:, :, a, b], axes=([1], [1]))
            out[:, a : a + stride * (h - 1) + 1 : stride, b : b + stride * (wd - 1) + 1 : stride, :] += contrib
    out = out[:, p : p + target_h, p : p + target_w, :]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def apply_activation(values: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(values, 0.0)
    if activation == "relu6":
        return np.clip(values, 0.0, 6.0)
    return values


def run_float_layer(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """Float64 forward of one layer on raw arrays (used by the transforms)."""
    _check_layer(x.shape, weight.shape, len(bias), spec)
    w = np.asarray(weight, dtype=np.float64)
    kernel = conv2d_array if spec.kind == "conv" else deconv2d_array
    out = kernel(np.asarray(x, dtype=np.float64), w, spec.stride)
    out += np.asarray(bias, dtype=np.float64).reshape(1, -1, 1, 1)
    return apply_activation(out, spec.activation)


# Float operations


def conv2d(x: Tensor, w: Union[Tensor, np.ndarray], b: ArrayLike, spec: LayerSpec) -> Tensor:
    """Zero-padded convolution with per-channel bias and optional activation."""
    weight = w.data if isinstance(w, Tensor) else np.asarray(w, dtype=np.float64)
    bias = np.asarray(b, dtype=np.float64).reshape(-1)
    if spec.kind != "conv":
        raise ShapeMismatchError(f"Layer {spec.name or '?'}: conv2d called with a {spec.kind} spec")
    return Tensor(run_float_layer(x.data, weight, bias, spec))


def deconv2d(x: Tensor, w: Union[Tensor, np.ndarray], b: ArrayLike, spec: LayerSpec) -> Tensor:
    """Transposed convolution producing exactly stride x the input resolution."""
    weight = w.data if isinstance(w, Tensor) else np.asarray(w, dtype=np.float64)
    bias = np.asarray(b, dtype=np.float64).reshape(-1)
    if spec.kind != "deconv":
        raise ShapeMismatchError(f"Layer {spec.name or '?'}: deconv2d called with a {spec.kind} spec")
    return Tensor(run_float_layer(x.data, weight, bias, spec))


def _elementwise(x: Any, fn) -> Any:
    if isinstance(x, Tensor):
        return Tensor(fn(x.data))
    arr = np.asarray(x, dtype=np.float64)
    result = fn(arr)
    if arr.ndim == 0:
        return float(result)
    return result


def relu(x: Any) -> Any:
    return _elementwise(x, lambda v: np.maximum(v, 0.0))


def relu6(x: Any) -> Any:
    return _elementwise(x, lambda v: np.clip(v, 0.0, 6.0))


def gelu_tanh(x: Any, literal: bool = False) -> Any:
    """
    GeLU, tanh approximation: 0.5 v (1 + tanh[a (v + b v^3)]).

    Standard constants a = sqrt(2/pi), b = 0.044715 by default; ``literal``
    selects the alternative a = sqrt(pi/2), b = 0.004715.
    """
    a, b = GELU_LITERAL if literal else GELU_STANDARD
    return _elementwise(x, lambda v: 0.5 * v * (1.0 + np.tanh(a * (v + b * v**3))))


def softmax(v: ArrayLike) -> np.ndarray:
    """Numerically stable softmax of a 1-D vector."""
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise TensorValueError("softmax of an empty vector")
    if not np.isfinite(arr).all():
        raise TensorValueError("softmax input must be finite")
    exps = np.exp(arr - arr.max())
    return exps / math.fsum(exps)


# Integer path


def _integer_layer(
    x: QuantTensor, w: QuantTensor, b: ArrayLike, requant: Requant, spec: LayerSpec, out_dtype: Any
) -> QuantTensor:
    bias = np.asarray(b, dtype=np.int64).reshape(-1)
    _check_layer(x.data.shape, w.data.shape, len(bias), spec)
    if len(requant.multiplier) != spec.out_channels:
        raise ShapeMismatchError(
            f"Layer {spec.name or '?'}: requant has {len(requant.multiplier)} channels, "
            f"expected {spec.out_channels}"
        )
    kernel = conv2d_array if spec.kind == "conv" else deconv2d_array
    acc = kernel(x.data.astype(np.int64), w.data.astype(np.int64), spec.stride)
    acc += bias.reshape(1, -1, 1, 1)
    out = requantize(acc, requant.multiplier, requant.shift, requant.lo, requant.hi)
    return QuantTensor(out.astype(out_dtype), requant.out_scale)


def quant_conv2d(x: QuantTensor, w: QuantTensor, b: ArrayLike, requant: Requant, spec: LayerSpec) -> QuantTensor:
    """
    int8 convolution: int64 accumulation, int32 bias, per-channel requant to int8.

    Bit-identical across runs, platforms and thread counts: every step is
    exact integer arithmetic.
    """
    if spec.kind != "conv":
        raise ShapeMismatchError(f"Layer {spec.name or '?'}: quant_conv2d called with a {spec.kind} spec")
    return _integer_layer(x, w, b, requant, spec, np.int8)


def quant_deconv2d(x: QuantTensor, w: QuantTensor, b: ArrayLike, requant: Requant, spec: LayerSpec) -> QuantTensor:
    """int8 transposed convolution; see quant_conv2d."""
    if spec.kind != "deconv":
        raise ShapeMismatchError(f"Layer {spec.name or '?'}: quant_deconv2d called with a {spec.kind} spec")
    return _integer_layer(x, w, b, requant, spec, np.int8)


def quant_layer_wide(x: QuantTensor, w: QuantTensor, b: ArrayLike, requant: Requant, spec: LayerSpec) -> QuantTensor:
    """Integer (transposed) convolution whose output is int32, saturated to requant.lo/hi."""
    if requant.lo < INT32_MIN or requant.hi > INT32_MAX:
        raise TensorValueError(f"Layer {spec.name or '?'}: wide requant bounds exceed int32")
    return _integer_layer(x, w, b, requant, spec, np.int32)


def quant_conv2d_wide(x: QuantTensor, w: QuantTensor, b: ArrayLike, requant: Requant, spec: LayerSpec) -> QuantTensor:
    if spec.kind != "conv":
        raise ShapeMismatchError(f"Layer {spec.name or '?'}: quant_conv2d_wide called with a {spec.kind} spec")
    return quant_layer_wide(x, w, b, requant, spec)


def quant_deconv2d_wide(
    x: QuantTensor, w: QuantTensor, b: ArrayLike, requant: Requant, spec: LayerSpec
) -> QuantTensor:
    if spec.kind != "deconv":
        raise ShapeMismatchError(f"Layer {spec.name or '?'}: quant_deconv2d_wide called with a {spec.kind} spec")
    return quant_layer_wide(x, w, b, requant, spec)


@dataclass(frozen=True)
class FlopCount:
    """Multiply-accumulate accounting of one layer (2 FLOPs per MAC)."""

    spec: LayerSpec
    in_hw: Tuple[int, int]
    macs: int = field(init=False)

    def __post_init__(self) -> None:
        h, w = self.in_hw
        k2 = self.spec.kernel * self.spec.kernel
        if self.spec.kind == "conv":
            oh, ow = self.spec.output_hw(h, w)
            macs = oh * ow * self.spec.out_channels * self.spec.in_channels * k2
        else:
            macs = h * w * self.spec.in_channels * self.spec.out_channels * k2
        object.__setattr__(self, "macs", int(macs))

    @property
    def flops(self) -> int:
        return 2 * self.macs


def layer_output_bounds(activation: str, out_scale: Optional[float]) -> Tuple[int, int]:
    """Integer saturation bounds realising an activation at a given output scale."""
    if activation == "relu":
        return 0, INT8_MAX
    if activation == "relu6":
        if out_scale is None:
            return 0, INT8_MAX
        return 0, int(min(INT8_MAX, round_half_away(6.0 / out_scale)))
    return INT8_MIN, INT8_MAX
