"""
Forward passes of the four codec subnetworks.

g_a (analysis), h_a (hyper analysis), h_s (hyper synthesis) and g_s
(synthesis), each in the float64 path or the int8 path depending on the
model's quantization mode. h_s always runs integer-only for decoding.
"""

import logging
from typing import List, Mapping, Tuple

import numpy as np

from model_store import ModelWeights, QuantLayer
from tensor_core import (
    INT8_MAX,
    INT8_MIN,
    LayerSpec,
    QuantTensor,
    quant_conv2d,
    quant_conv2d_wide,
    quant_deconv2d,
    quant_deconv2d_wide,
    quantize_tensor,
    run_float_layer,
)

logger = logging.getLogger(__name__)


def run_float_layers(model: ModelWeights, specs: List[LayerSpec], x: np.ndarray) -> np.ndarray:
    for spec in specs:
        x = run_float_layer(x, model.weights[spec.name], model.biases[spec.name], spec)
    return x


def run_quant_layers(
    specs: List[LayerSpec], quant: Mapping[str, QuantLayer], q: QuantTensor, wide_last: bool = False
) -> QuantTensor:
    """Chain integer layers; the last one saturates to int32 when ``wide_last``."""
    for i, spec in enumerate(specs):
        layer = quant[spec.name]
        if wide_last and i == len(specs) - 1:
            wide = quant_conv2d_wide if spec.kind == "conv" else quant_deconv2d_wide
            q = wide(q, layer.weight, layer.bias, layer.requant, spec)
        elif spec.kind == "conv":
            q = quant_conv2d(q, layer.weight, layer.bias, layer.requant, spec)
        else:
            q = quant_deconv2d(q, layer.weight, layer.bias, layer.requant, spec)
    return q


def _run_subnetwork(model: ModelWeights, subnetwork: str, x: np.ndarray) -> np.ndarray:
    specs = model.config.subnetwork_specs(subnetwork)
    if not model.uses_int(subnetwork):
        return run_float_layers(model, specs, x)
    first = model.quant[specs[0].name]
    q = quantize_tensor(x, first.in_scale)
    return run_quant_layers(specs, model.quant, q).dequantize()


def analysis_transform(model: ModelWeights, x: np.ndarray) -> np.ndarray:
    """g_a: image (n, 3, H, W) in [0, 1] to latent y at 1/16 resolution."""
    return _run_subnetwork(model, "g_a", x)


def hyper_analysis_transform(model: ModelWeights, y: np.ndarray) -> np.ndarray:
    """h_a: latent y to hyper-latent z at 1/64 resolution."""
    return _run_subnetwork(model, "h_a", y)


def synthesis_transform(model: ModelWeights, y_hat: np.ndarray) -> np.ndarray:
    """g_s: reconstructed latent to image (unclamped)."""
    return _run_subnetwork(model, "g_s", y_hat)


def hyper_synthesis_int(model: ModelWeights, z_hat: np.ndarray) -> np.ndarray:
    """
    h_s on the integer path: z_hat at unit scale, saturated to int8, in;
    raw int32 outputs (n, 2M, h, w) out. The first M channels are mu in steps
    of mu_scale, the last M are sigma in steps of sigma_scale.

    Entries of z_hat outside int8 are still coded losslessly in the bitstream,
    but h_s sees them clipped; encoder and decoder clip identically.
    """
    specs = model.config.subnetwork_specs("h_s")
    z = np.asarray(z_hat, dtype=np.int64)
    clipped = int(np.count_nonzero((z < INT8_MIN) | (z > INT8_MAX)))
    if clipped:
        logger.debug(f"h_s input: {clipped} z_hat values outside int8 clipped")
    q_in = np.clip(z, INT8_MIN, INT8_MAX).astype(np.int8)
    q = run_quant_layers(specs, model.quant, QuantTensor(q_in, model.quant[specs[0].name].in_scale), wide_last=True)
    return q.data.astype(np.int64)


def hyper_synthesis_float(model: ModelWeights, z_hat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Float reference of h_s: (mu, sigma) before any output quantization."""
    out = run_float_layers(model, model.config.subnetwork_specs("h_s"), np.asarray(z_hat, dtype=np.float64))
    m = model.config.latent_channels
    return out[:, :m], out[:, m:]


def collect_activations(model: ModelWeights, subnetwork: str, x: np.ndarray) -> List[np.ndarray]:
    """Float input and every layer output of a subnetwork, for calibration."""
    outputs = [np.asarray(x, dtype=np.float64)]
    for spec in model.config.subnetwork_specs(subnetwork):
        outputs.append(run_float_layer(outputs[-1], model.weights[spec.name], model.biases[spec.name], spec))
    return outputs
