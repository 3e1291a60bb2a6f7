"""
Quantization toolkit for the LIC codec.

LSQ fake-quantization with its analytic gradients, post-training
calibration statistics, and conversion of a float model to the int8
inference path.
"""

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from model_store import QUANT_MODES, ChannelConfig, ModelWeights, QuantLayer, SplitMix64
from tensor_core import (
    INT32_MAX,
    INT32_MIN,
    INT8_MAX,
    INT8_MIN,
    LayerSpec,
    QuantTensor,
    Requant,
    Tensor,
    layer_output_bounds,
    requant_multiplier,
    round_half_away,
    run_float_layer,
)
from utils import LicCodecError, PerformanceTimer

logger = logging.getLogger(__name__)

BIT_WIDTH = 8
QN = 128
QP = 127
STEP_FLOOR = 1e-12
HISTOGRAM_BINS = 2048
MIN_EXPONENT = -1074
ACTIVATION_PERCENTILE = 99.99
DATA_FREE_SEED_SALT = 0x5EED_CA1B
DATA_FREE_SHAPE = (2, 8, 8)
DATA_FREE_RANGE = 4


class QuantizationError(LicCodecError):
    """Raised for invalid quantization parameters."""

    pass


class CalibrationError(QuantizationError):
    """Raised when calibration has no data or an invalid policy."""

    pass


Number = Union[float, np.ndarray]


def _check_step(s: Number) -> np.ndarray:
    step = np.asarray(s, dtype=np.float64)
    if not (step > 0).all():
        raise QuantizationError(f"quantization step must be positive, got {s}")
    return step


def _scalar_or_array(result: np.ndarray, *inputs: Number) -> Number:
    if all(np.ndim(x) == 0 for x in inputs):
        return float(result)
    return result


# LSQ primitives


def lsq_quantize(v: Number, s: Number, qn: int = QN, qp: int = QP) -> Number:
    """v_hat = clip(round_half_away(v / s), -qn, qp) * s."""
    step = _check_step(s)
    q = np.clip(round_half_away(np.asarray(v, dtype=np.float64) / step), -qn, qp)
    return _scalar_or_array(q * step, v, s)


def lsq_grad_step(v: Number, s: Number, qn: int = QN, qp: int = QP) -> Number:
    """
    d v_hat / d s: -v/s + round(v/s) strictly inside (-qn, qp), -qn at or
    below the lower clip point and qp at or above the upper one.
    """
    step = _check_step(s)
    r = np.asarray(v, dtype=np.float64) / step
    grad = np.where(r <= -qn, float(-qn), np.where(r >= qp, float(qp), -r + round_half_away(r)))
    return _scalar_or_array(grad, v, s)


def lsq_grad_input(v: Number, s: Number, qn: int = QN, qp: int = QP) -> Number:
    """Straight-through mask: 1 on the open interval -qn < v/s < qp, else 0."""
    step = _check_step(s)
    r = np.asarray(v, dtype=np.float64) / step
    mask = ((r > -qn) & (r < qp)).astype(np.float64)
    return _scalar_or_array(mask, v, s)


@dataclass(frozen=True)
class QuantParams:
    """Signed 8-bit quantizer; step is per-tensor or per-channel."""

    step: Number
    bit_width: int = BIT_WIDTH
    qn: int = QN
    qp: int = QP

    def __post_init__(self) -> None:
        if self.bit_width != BIT_WIDTH or self.qn != QN or self.qp != QP:
            raise QuantizationError("only signed 8-bit quantization (Qn=128, Qp=127) is supported")
        _check_step(self.step)

    def quantize(self, v: Number) -> Number:
        return lsq_quantize(v, self.step, self.qn, self.qp)


def sqnr_db(reference: np.ndarray, test: np.ndarray) -> float:
    """Signal-to-quantization-noise ratio of ``test`` against ``reference``."""
    ref = np.asarray(reference, dtype=np.float64)
    noise = float(np.sum((ref - np.asarray(test, dtype=np.float64)) ** 2))
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(float(np.sum(ref**2)) / noise)


# Calibration


def _exponent_for(absmax: float) -> int:
    if absmax <= 0.0:
        return MIN_EXPONENT
    _, exponent = math.frexp(absmax / HISTOGRAM_BINS)
    return max(exponent, MIN_EXPONENT)


@dataclass
class CalibrationStats:
    """
    Running absmax and a magnitude histogram of one tensor.

    Bin width is a power of two chosen so that absmax < bins * width; growing
    the range merges whole bins, so two histograms combine exactly by integer
    addition in any order.
    """

    count: int = 0
    absmax: float = 0.0
    exponent: int = MIN_EXPONENT
    histogram: np.ndarray = field(default_factory=lambda: np.zeros(HISTOGRAM_BINS, dtype=np.int64))

    @property
    def bin_width(self) -> float:
        return math.ldexp(1.0, self.exponent)

    def _grow_to(self, exponent: int) -> None:
        if exponent <= self.exponent:
            return
        shift = exponent - self.exponent
        if shift >= 11:
            merged = np.zeros(HISTOGRAM_BINS, dtype=np.int64)
            merged[0] = int(self.histogram.sum())
        else:
            factor = 1 << shift
            merged = np.zeros(HISTOGRAM_BINS, dtype=np.int64)
            merged[: HISTOGRAM_BINS // factor] = self.histogram.reshape(-1, factor).sum(axis=1)
        self.histogram = merged
        self.exponent = exponent

    def observe(self, values: Union[np.ndarray, Tensor]) -> "CalibrationStats":
        data = values.data if isinstance(values, Tensor) else values
        mags = np.abs(np.asarray(data, dtype=np.float64)).reshape(-1)
        if mags.size == 0:
            return self
        if not np.isfinite(mags).all():
            raise CalibrationError("calibration values must be finite")
        absmax = max(self.absmax, float(mags.max()))
        self._grow_to(_exponent_for(absmax))
        index = np.minimum(np.floor(np.ldexp(mags, -self.exponent)).astype(np.int64), HISTOGRAM_BINS - 1)
        self.histogram += np.bincount(index, minlength=HISTOGRAM_BINS)
        self.count += int(mags.size)
        self.absmax = absmax
        return self

    def merge(self, other: "CalibrationStats") -> "CalibrationStats":
        """Combined statistics; neither operand is modified."""
        merged = CalibrationStats(self.count, self.absmax, self.exponent, self.histogram.copy())
        incoming = CalibrationStats(other.count, other.absmax, other.exponent, other.histogram.copy())
        exponent = max(merged.exponent, incoming.exponent)
        merged._grow_to(exponent)
        incoming._grow_to(exponent)
        merged.histogram += incoming.histogram
        merged.count += incoming.count
        merged.absmax = max(merged.absmax, incoming.absmax)
        return merged

    def percentile(self, p: float) -> float:
        """p-quantile of |v|: upper edge of the bin holding it, capped at absmax."""
        if self.count == 0:
            raise CalibrationError("percentile of empty calibration statistics")
        if not 0.0 < p <= 100.0:
            raise CalibrationError(f"percentile must be in (0, 100], got {p}")
        target = max(1, math.ceil(p / 100.0 * self.count))
        index = int(np.searchsorted(np.cumsum(self.histogram), target, side="left"))
        return min((index + 1) * self.bin_width, self.absmax)


@dataclass(frozen=True)
class CalibrationPolicy:
    """``absmax`` or ``percentile(p)``."""

    kind: str = "percentile"
    percentile: float = ACTIVATION_PERCENTILE

    def __post_init__(self) -> None:
        if self.kind not in ("absmax", "percentile"):
            raise CalibrationError(f"unknown calibration policy {self.kind!r}")
        if self.kind == "percentile" and not 0.0 < self.percentile <= 100.0:
            raise CalibrationError(f"percentile must be in (0, 100], got {self.percentile}")

    @classmethod
    def parse(cls, text: str) -> "CalibrationPolicy":
        text = text.strip().lower()
        if text == "absmax":
            return cls("absmax")
        match = re.fullmatch(r"percentile\(\s*([0-9.]+)\s*\)", text)
        if not match:
            raise CalibrationError(f"cannot parse calibration policy {text!r}")
        try:
            return cls("percentile", float(match.group(1)))
        except ValueError as e:
            raise CalibrationError(f"cannot parse calibration policy {text!r}") from e

    def __str__(self) -> str:
        return "absmax" if self.kind == "absmax" else f"percentile({self.percentile:g})"


def calibrate(stats: CalibrationStats, policy: Union[CalibrationPolicy, str] = "absmax") -> float:
    """Step size s = (absmax or percentile of |v|) / Qp, floored at 1e-12."""
    if isinstance(policy, str):
        policy = CalibrationPolicy.parse(policy)
    if stats.count == 0:
        raise CalibrationError("cannot calibrate from empty statistics")
    value = stats.absmax if policy.kind == "absmax" else stats.percentile(policy.percentile)
    return max(value / QP, STEP_FLOOR)


# Layer conversion


def quantize_weight_per_channel(weight: np.ndarray) -> QuantTensor:
    """Symmetric int8 weights with an absmax step per output channel."""
    w = np.asarray(weight, dtype=np.float64)
    absmax = np.abs(w.reshape(w.shape[0], -1)).max(axis=1)
    steps = np.maximum(absmax / QP, STEP_FLOOR)
    shape = (-1,) + (1,) * (w.ndim - 1)
    q = np.clip(round_half_away(w / steps.reshape(shape)), INT8_MIN, INT8_MAX).astype(np.int8)
    return QuantTensor(q, steps)


def quantize_layer(
    weight: np.ndarray,
    bias: np.ndarray,
    spec: LayerSpec,
    in_scale: float,
    out_scale: Union[float, np.ndarray],
    wide: bool = False,
) -> QuantLayer:
    """
    Integer parameters of one layer.

    ``out_scale`` may be per-channel (the final h_s layer maps mu and sigma
    channels onto different steps); ``wide`` keeps the output in int32.
    """
    qweight = quantize_weight_per_channel(weight)
    w_steps = np.asarray(qweight.scale, dtype=np.float64)
    acc_steps = in_scale * w_steps
    qbias = np.clip(round_half_away(np.asarray(bias, dtype=np.float64) / acc_steps), INT32_MIN, INT32_MAX)

    out_steps = np.broadcast_to(np.asarray(out_scale, dtype=np.float64), (spec.out_channels,))
    if not (out_steps > 0).all():
        raise QuantizationError(f"layer {spec.name}: output steps must be positive")
    pairs = [requant_multiplier(float(r)) for r in acc_steps / out_steps]
    multiplier = np.array([m for m, _ in pairs], dtype=np.int64)
    shift = np.array([n for _, n in pairs], dtype=np.int64)

    nominal = float(out_steps[0])
    if wide:
        lo, hi = INT32_MIN, INT32_MAX
    else:
        lo, hi = layer_output_bounds(spec.activation, nominal)
    return QuantLayer(qweight, qbias.astype(np.int64), Requant(multiplier, shift, nominal, lo, hi), float(in_scale))


def quantize_chain(
    specs: Sequence[LayerSpec],
    weights: Mapping[str, np.ndarray],
    biases: Mapping[str, np.ndarray],
    stats: Sequence[CalibrationStats],
    in_scale: float,
    policy: CalibrationPolicy,
    final_scales: Optional[np.ndarray] = None,
) -> Dict[str, QuantLayer]:
    """
    Quantize consecutive layers; stats[i] describes the output of layer i.
    Each layer's input step is the previous layer's output step.
    """
    layers: Dict[str, QuantLayer] = {}
    scale = in_scale
    for i, spec in enumerate(specs):
        last = i == len(specs) - 1
        if last and final_scales is not None:
            out_scale: Union[float, np.ndarray] = final_scales
        else:
            out_scale = calibrate(stats[i], policy)
        layers[spec.name] = quantize_layer(
            weights[spec.name], biases[spec.name], spec, scale, out_scale, wide=last and final_scales is not None
        )
        scale = float(np.asarray(out_scale).reshape(-1)[0])
    return layers


def _hyper_output_scales(config: ChannelConfig, mu_scale: float, sigma_scale: float) -> np.ndarray:
    m = config.latent_channels
    return np.concatenate([np.full(m, mu_scale), np.full(m, sigma_scale)])


def _chain_stats(
    specs: Sequence[LayerSpec], weights: Mapping[str, np.ndarray], biases: Mapping[str, np.ndarray], x: np.ndarray
) -> List[CalibrationStats]:
    stats = [CalibrationStats().observe(x)]
    for spec in specs:
        x = run_float_layer(x, weights[spec.name], biases[spec.name], spec)
        stats.append(CalibrationStats().observe(x))
    return stats


def calibrate_hyper_synthesis_data_free(
    config: ChannelConfig,
    weights: Mapping[str, np.ndarray],
    biases: Mapping[str, np.ndarray],
    mu_scale: float,
    sigma_scale: float,
    seed: int = 0,
    policy: Optional[CalibrationPolicy] = None,
) -> Dict[str, QuantLayer]:
    """
    Integer h_s parameters without data: activations are calibrated on
    seeded synthetic hyper-latents drawn uniformly from [-4, 4].
    """
    policy = policy or CalibrationPolicy()
    rng = SplitMix64(int(seed) ^ DATA_FREE_SEED_SALT)
    n, h, w = DATA_FREE_SHAPE
    shape = (n, config.hyper_channels, h, w)
    z_hat = (rng.integers(int(np.prod(shape)), 2 * DATA_FREE_RANGE + 1) - DATA_FREE_RANGE).reshape(shape)
    specs = config.subnetwork_specs("h_s")
    stats = _chain_stats(specs, weights, biases, z_hat.astype(np.float64))
    return quantize_chain(
        specs, weights, biases, stats[1:], 1.0, policy, _hyper_output_scales(config, mu_scale, sigma_scale)
    )


def _image_statistics(model: ModelWeights, image: np.ndarray, mode: str) -> Dict[str, List[CalibrationStats]]:
    from codec_pipeline import pad_replicate_array
    from transforms import collect_activations

    x = pad_replicate_array(image)
    result: Dict[str, List[CalibrationStats]] = {}
    ga = collect_activations(model, "g_a", x)
    ha = collect_activations(model, "h_a", ga[-1])
    z_hat = round_half_away(ha[-1])
    hs = collect_activations(model, "h_s", z_hat)
    result["g_a"] = [CalibrationStats().observe(a) for a in ga]
    result["h_a"] = [CalibrationStats().observe(a) for a in ha]
    result["h_s"] = [CalibrationStats().observe(a) for a in hs]
    if mode == "full-int":
        m = model.config.latent_channels
        mu = hs[-1][:, :m]
        y_hat = round_half_away(ga[-1] - mu) + mu
        result["g_s"] = [CalibrationStats().observe(a) for a in collect_activations(model, "g_s", y_hat)]
    return result


def convert_to_int8(
    model: ModelWeights,
    calib_images: Sequence[Union[np.ndarray, Tensor]],
    mode: str = "hs-int",
    policy: Optional[CalibrationPolicy] = None,
    weight_policy: str = "absmax",
    workers: int = 1,
) -> ModelWeights:
    """
    Post-training conversion to the int8 path.

    Weight steps are per-channel absmax; activation steps come from the
    merged calibration histograms (percentile 99.99 by default). ``float``
    keeps the model's existing h_s parameters and drops all others. The
    result depends only on the model and the images, not on ``workers``.
    """
    if mode not in QUANT_MODES:
        raise QuantizationError(f"unknown quantization mode {mode!r}; expected one of {QUANT_MODES}")
    if weight_policy != "absmax":
        raise QuantizationError(f"weights are calibrated per channel with absmax, got {weight_policy!r}")
    if mode == "float":
        h_s = {spec.name: model.quant[spec.name] for spec in model.config.subnetwork_specs("h_s")}
        return model.with_quant(h_s, "float")
    if not calib_images:
        raise CalibrationError("calibration set is empty")
    if workers < 1:
        raise QuantizationError(f"workers must be >= 1, got {workers}")

    policy = policy or CalibrationPolicy()
    images = [img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64) for img in calib_images]

    with PerformanceTimer(f"Calibration ({mode}, {len(images)} images)"):
        with ThreadPoolExecutor(max_workers=workers) as executor:
            per_image = list(executor.map(lambda img: _image_statistics(model, img, mode), images))

        merged = per_image[0]
        for other in per_image[1:]:
            merged = {key: [a.merge(b) for a, b in zip(merged[key], other[key])] for key in merged}

        config = model.config
        quant: Dict[str, QuantLayer] = {}
        quant.update(
            quantize_chain(
                config.subnetwork_specs("h_s"),
                model.weights,
                model.biases,
                merged["h_s"][1:],
                1.0,
                policy,
                _hyper_output_scales(config, model.mu_scale, model.sigma_scale),
            )
        )
        encoder_side = ("g_a", "h_a") if mode in ("enc-int", "full-int") else ()
        decoder_side = ("g_s",) if mode == "full-int" else ()
        for subnetwork in encoder_side + decoder_side:
            stats = merged[subnetwork]
            quant.update(
                quantize_chain(
                    config.subnetwork_specs(subnetwork),
                    model.weights,
                    model.biases,
                    stats[1:],
                    calibrate(stats[0], policy),
                    policy,
                )
            )

    converted = model.with_quant(quant, mode)
    logger.info(f"Converted model {model.model_id:016x} to {mode} ({len(quant)} integer layers, policy {policy})")
    return converted
