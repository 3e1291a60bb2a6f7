"""
Supernet machinery for channel search.

Search spaces over the output widths of the codec layers, hypernetwork
weight generation from per-layer weight banks, slimmable slicing of a
maximal model, sandwich-rule sampling and FLOP accounting.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, Iterator, List, Mapping, Sequence, Tuple, Union

import numpy as np

from model_store import (
    CHANNEL_CONFIGS,
    DEFAULT_MU_SCALE,
    DEFAULT_SIGMA_SCALE,
    ChannelConfig,
    ModelWeights,
    QuantLayer,
    SplitMix64,
)
from quantization import calibrate_hyper_synthesis_data_free
from tensor_core import FlopCount, LayerSpec, QuantTensor, Requant, gelu_tanh, softmax
from utils import LicCodecError, load_json_file

logger = logging.getLogger(__name__)

SEARCHABLE_LAYERS = ("ga0", "ga1", "ga2", "ga3", "ha0", "ha1", "ha2", "hs0", "hs1", "gs0", "gs1", "gs2", "gs3")
BANK_COUNT = 4
BIAS_HIDDEN = 16
DEFAULT_CANDIDATES = tuple(range(32, 257, 16))


class SearchSpaceError(LicCodecError):
    """Raised for invalid search spaces or configurations outside them."""

    pass


@dataclass(frozen=True)
class SubConfig:
    """One width per searchable layer, in SEARCHABLE_LAYERS order."""

    values: Tuple[int, ...]

    def __post_init__(self) -> None:
        values = tuple(int(v) for v in self.values)
        if len(values) != len(SEARCHABLE_LAYERS):
            raise SearchSpaceError(f"SubConfig needs {len(SEARCHABLE_LAYERS)} widths, got {len(values)}")
        object.__setattr__(self, "values", values)

    def to_channel_config(self) -> ChannelConfig:
        v = self.values
        return ChannelConfig(v[0:4], v[4:7], (v[7], v[8], v[3]), v[9:13])

    @classmethod
    def from_channel_config(cls, config: ChannelConfig) -> "SubConfig":
        return cls(config.ga_channels + config.ha_channels + config.hs_channels[:2] + config.gs_channels)

    def as_dict(self) -> Dict[str, int]:
        return dict(zip(SEARCHABLE_LAYERS, self.values))

    def label(self) -> str:
        return "-".join(str(v) for v in self.values)


@dataclass(frozen=True)
class SearchSpace:
    """Candidate widths per searchable layer; the last g_s layer is fixed at 3."""

    candidates: Tuple[Tuple[int, ...], ...]
    name: str = "custom"

    def __post_init__(self) -> None:
        lists = tuple(tuple(int(c) for c in layer) for layer in self.candidates)
        if len(lists) != len(SEARCHABLE_LAYERS):
            raise SearchSpaceError(f"search space needs {len(SEARCHABLE_LAYERS)} layers, got {len(lists)}")
        for layer, values in zip(SEARCHABLE_LAYERS, lists):
            if not values:
                raise SearchSpaceError(f"layer {layer}: empty candidate list")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise SearchSpaceError(f"layer {layer}: candidates must be strictly increasing, got {values}")
            if values[0] < 1:
                raise SearchSpaceError(f"layer {layer}: candidates must be positive")
        if lists[-1] != (3,):
            raise SearchSpaceError(f"final g_s layer must be fixed at (3,), got {lists[-1]}")
        object.__setattr__(self, "candidates", lists)

    @property
    def size(self) -> int:
        return math.prod(len(c) for c in self.candidates)

    @property
    def dimension(self) -> int:
        return len(self.candidates)

    def min_config(self) -> SubConfig:
        return SubConfig(tuple(c[0] for c in self.candidates))

    def max_config(self) -> SubConfig:
        return SubConfig(tuple(c[-1] for c in self.candidates))

    def contains(self, cfg: SubConfig) -> bool:
        return all(v in c for v, c in zip(cfg.values, self.candidates))

    def validate(self, cfg: SubConfig) -> None:
        for layer, value, options in zip(SEARCHABLE_LAYERS, cfg.values, self.candidates):
            if value not in options:
                raise SearchSpaceError(f"layer {layer}: width {value} not among candidates {options}")

    def indices(self, cfg: SubConfig) -> Tuple[int, ...]:
        self.validate(cfg)
        return tuple(options.index(v) for v, options in zip(cfg.values, self.candidates))

    def from_indices(self, indices: Sequence[int]) -> SubConfig:
        return SubConfig(tuple(options[i] for options, i in zip(self.candidates, indices)))

    def enumerate(self) -> Iterator[SubConfig]:
        for values in itertools.product(*self.candidates):
            yield SubConfig(values)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "layers": [{"name": n, "candidates": list(c)} for n, c in zip(SEARCHABLE_LAYERS, self.candidates)],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SearchSpace":
        try:
            layers = {entry["name"]: tuple(entry["candidates"]) for entry in data["layers"]}
        except (KeyError, TypeError) as e:
            raise SearchSpaceError(f"invalid search space document: {e}") from e
        missing = [name for name in SEARCHABLE_LAYERS if name not in layers]
        if missing:
            raise SearchSpaceError(f"search space is missing layers {missing}")
        return cls(tuple(layers[name] for name in SEARCHABLE_LAYERS), str(data.get("name", "custom")))


def default_space() -> SearchSpace:
    """32..256 in steps of 16 for every layer except the fixed RGB output."""
    return SearchSpace(tuple([DEFAULT_CANDIDATES] * 12 + [(3,)]), "default")


def paired_space() -> SearchSpace:
    """Each layer choosing between the Origin and NAS widths."""
    origin = SubConfig.from_channel_config(CHANNEL_CONFIGS["origin"]).values
    nas = SubConfig.from_channel_config(CHANNEL_CONFIGS["nas"]).values
    return SearchSpace(tuple(tuple(sorted({a, b})) for a, b in zip(origin, nas)), "paired")


BUILTIN_SPACES = {"default": default_space, "paired": paired_space}


def resolve_search_space(name_or_path: Union[str, Path]) -> SearchSpace:
    key = str(name_or_path)
    if key in BUILTIN_SPACES:
        return BUILTIN_SPACES[key]()
    return SearchSpace.from_dict(load_json_file(key))


# Config encoding and sampling


def encode_config(cfg: SubConfig, space: SearchSpace) -> np.ndarray:
    """Per-layer (choice - min) / (max - min); single-candidate layers encode to 0."""
    space.validate(cfg)
    vec = np.zeros(space.dimension, dtype=np.float64)
    for i, (value, options) in enumerate(zip(cfg.values, space.candidates)):
        lo, hi = options[0], options[-1]
        vec[i] = 0.0 if hi == lo else (value - lo) / (hi - lo)
    return vec


def decode_config(cfg_vec: np.ndarray, space: SearchSpace) -> SubConfig:
    """Nearest candidate per layer to an encoded vector."""
    values = []
    for v, options in zip(np.asarray(cfg_vec, dtype=np.float64), space.candidates):
        target = options[0] + float(v) * (options[-1] - options[0])
        values.append(min(options, key=lambda c: (abs(c - target), c)))
    return SubConfig(tuple(values))


def sample_sandwich(space: SearchSpace, rng_seed: int) -> List[SubConfig]:
    """{min, random, random, max}; the randoms come from SplitMix64(rng_seed)."""
    rng = SplitMix64(rng_seed)
    randoms = []
    for _ in range(2):
        randoms.append(space.from_indices([int(rng.integers(1, len(c))[0]) for c in space.candidates]))
    return [space.min_config(), randoms[0], randoms[1], space.max_config()]


# Slicing


def output_index(spec: LayerSpec, max_out: int) -> np.ndarray:
    """
    Filters kept when slicing a layer to spec.out_channels. The final h_s
    layer keeps the leading channels of its mu half and of its sigma half.
    """
    if spec.name == "h_s.2":
        m, max_m = spec.out_channels // 2, max_out // 2
        return np.concatenate([np.arange(m), max_m + np.arange(m)])
    return np.arange(spec.out_channels)


def slice_weight(weight: np.ndarray, out_index: np.ndarray, in_channels: int) -> np.ndarray:
    return np.asarray(weight)[out_index][:, :in_channels]


def _slice_quant(layer: QuantLayer, out_index: np.ndarray, in_channels: int) -> QuantLayer:
    scale = layer.weight.scale
    if isinstance(scale, np.ndarray):
        scale = scale[out_index]
    weight = QuantTensor(slice_weight(layer.weight.data, out_index, in_channels), scale)
    r = layer.requant
    requant = Requant(r.multiplier[out_index], r.shift[out_index], r.out_scale, r.lo, r.hi)
    return QuantLayer(weight, layer.bias[out_index], requant, layer.in_scale)


def _as_channel_config(cfg: Union[SubConfig, ChannelConfig]) -> ChannelConfig:
    return cfg.to_channel_config() if isinstance(cfg, SubConfig) else cfg


def slice_submodel(max_weights: ModelWeights, cfg: Union[SubConfig, ChannelConfig]) -> ModelWeights:
    """
    Keep the leading out_c filters and leading in_c input channels of every
    layer (integer parameters included).

    Raises:
        SearchSpaceError: if any width of cfg exceeds the maximal model
    """
    config = _as_channel_config(cfg)
    max_specs = {spec.name: spec for spec in max_weights.specs}
    weights: Dict[str, np.ndarray] = {}
    biases: Dict[str, np.ndarray] = {}
    quant: Dict[str, QuantLayer] = {}
    for spec in config.layer_specs():
        big = max_specs[spec.name]
        if spec.out_channels > big.out_channels or spec.in_channels > big.in_channels:
            raise SearchSpaceError(
                f"layer {spec.name}: ({spec.out_channels}, {spec.in_channels}) exceeds maximal "
                f"({big.out_channels}, {big.in_channels})"
            )
        out_index = output_index(spec, big.out_channels)
        weights[spec.name] = slice_weight(max_weights.weights[spec.name], out_index, spec.in_channels)
        biases[spec.name] = np.asarray(max_weights.biases[spec.name])[out_index]
        if spec.name in max_weights.quant:
            quant[spec.name] = _slice_quant(max_weights.quant[spec.name], out_index, spec.in_channels)

    z = config.hyper_channels
    return ModelWeights(
        config,
        weights,
        biases,
        max_weights.z_mu[:z],
        max_weights.z_sigma[:z],
        quant,
        max_weights.mu_scale,
        max_weights.sigma_scale,
        max_weights.quant_mode,
    )


# Weight banks


@dataclass(frozen=True)
class LayerBank:
    """
    G candidate weights at maximal shape, the coefficient head
    Linear(D -> G) and the bias head Linear(D -> 16) -> GeLU -> Linear(16 -> max_out).
    """

    banks: np.ndarray
    coef_weight: np.ndarray
    coef_bias: np.ndarray
    hidden_weight: np.ndarray
    hidden_bias: np.ndarray
    out_weight: np.ndarray
    out_bias: np.ndarray

    def __post_init__(self) -> None:
        for name in self.__dataclass_fields__:
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.banks.ndim != 5:
            raise SearchSpaceError(f"banks must be (G, out, in, k, k), got {self.banks.shape}")
        if self.coef_weight.shape[0] != self.banks.shape[0]:
            raise SearchSpaceError("coefficient head width must equal the bank count")
        if self.out_weight.shape[0] != self.banks.shape[1]:
            raise SearchSpaceError("bias head output must equal the maximal out channels")


@dataclass(frozen=True)
class WeightBanks:
    space: SearchSpace
    layers: Mapping[str, LayerBank]
    seed: int = 0

    @property
    def max_config(self) -> ChannelConfig:
        return self.space.max_config().to_channel_config()

    def layer(self, name: str) -> LayerBank:
        if name not in self.layers:
            raise SearchSpaceError(f"no weight bank for layer {name!r}")
        return self.layers[name]

    @classmethod
    def initialize(cls, space: SearchSpace, seed: int, bank_count: int = BANK_COUNT) -> "WeightBanks":
        """Seeded banks: weights uniform in +-1/sqrt(fan_in), heads uniform in +-1/sqrt(fan_in) too."""
        rng = SplitMix64(seed)
        d = space.dimension

        def uniform(shape: Tuple[int, ...], bound: float) -> np.ndarray:
            return (2.0 * rng.uniform(int(np.prod(shape))).reshape(shape) - 1.0) * bound

        layers: Dict[str, LayerBank] = {}
        for spec in space.max_config().to_channel_config().layer_specs():
            fan_in = spec.in_channels * spec.kernel * spec.kernel
            layers[spec.name] = LayerBank(
                banks=uniform((bank_count,) + spec.weight_shape, 1.0 / math.sqrt(fan_in)),
                coef_weight=uniform((bank_count, d), 1.0 / math.sqrt(d)),
                coef_bias=uniform((bank_count,), 1.0 / math.sqrt(d)),
                hidden_weight=uniform((BIAS_HIDDEN, d), 1.0 / math.sqrt(d)),
                hidden_bias=uniform((BIAS_HIDDEN,), 1.0 / math.sqrt(d)),
                out_weight=uniform((spec.out_channels, BIAS_HIDDEN), 0.1 / math.sqrt(BIAS_HIDDEN)),
                out_bias=np.zeros(spec.out_channels),
            )
        logger.debug(f"Initialized {bank_count} weight banks per layer for space {space.name} (seed {seed})")
        return cls(space, MappingProxyType(layers), seed)


def bank_coefficients(banks: WeightBanks, layer: str, cfg_vec: np.ndarray) -> np.ndarray:
    """softmax(Linear(cfg_vec)): one mixing coefficient per bank."""
    bank = banks.layer(layer)
    logits = bank.coef_weight @ np.asarray(cfg_vec, dtype=np.float64) + bank.coef_bias
    return softmax(logits)


def _layer_spec(banks: WeightBanks, layer: str, cfg_vec: np.ndarray) -> Tuple[LayerSpec, LayerSpec]:
    config = decode_config(cfg_vec, banks.space).to_channel_config()
    spec = next(s for s in config.layer_specs() if s.name == layer)
    big = next(s for s in banks.max_config.layer_specs() if s.name == layer)
    return spec, big


def mix_banks(bank: LayerBank, coefficients: np.ndarray) -> np.ndarray:
    """The coefficient-weighted sum over the bank axis."""
    return np.tensordot(np.asarray(coefficients, dtype=np.float64), bank.banks, axes=1)


def generate_weight(banks: WeightBanks, layer: str, cfg_vec: np.ndarray) -> np.ndarray:
    """Mix the layer's banks with softmax coefficients, then slice to the encoded widths."""
    spec, big = _layer_spec(banks, layer, cfg_vec)
    mixed = mix_banks(banks.layer(layer), bank_coefficients(banks, layer, cfg_vec))
    return slice_weight(mixed, output_index(spec, big.out_channels), spec.in_channels)


def generate_bias(banks: WeightBanks, layer: str, cfg_vec: np.ndarray) -> np.ndarray:
    """Linear -> GeLU -> Linear on the encoded config, sliced to out_c."""
    spec, big = _layer_spec(banks, layer, cfg_vec)
    bank = banks.layer(layer)
    v = np.asarray(cfg_vec, dtype=np.float64)
    hidden = gelu_tanh(bank.hidden_weight @ v + bank.hidden_bias)
    full = bank.out_weight @ hidden + bank.out_bias
    return full[output_index(spec, big.out_channels)]


def materialize_model(banks: WeightBanks, cfg: SubConfig) -> ModelWeights:
    """Deployable model whose parameters are generated for cfg."""
    banks.space.validate(cfg)
    vec = encode_config(cfg, banks.space)
    config = cfg.to_channel_config()
    weights = {s.name: generate_weight(banks, s.name, vec).astype(np.float32) for s in config.layer_specs()}
    biases = {s.name: generate_bias(banks, s.name, vec).astype(np.float32) for s in config.layer_specs()}
    quant = calibrate_hyper_synthesis_data_free(
        config, weights, biases, DEFAULT_MU_SCALE, DEFAULT_SIGMA_SCALE, seed=banks.seed
    )
    z = config.hyper_channels
    return ModelWeights(config, weights, biases, np.zeros(z), np.ones(z), quant)


# FLOP accounting


def subnetwork_inputs(config: ChannelConfig, input_hw: Tuple[int, int]) -> Dict[str, Tuple[int, int]]:
    """Spatial input dims of each subnetwork for an image of input_hw."""
    h, w = input_hw
    for spec in config.subnetwork_specs("g_a"):
        h, w = spec.output_hw(h, w)
    y_hw = (h, w)
    for spec in config.subnetwork_specs("h_a"):
        h, w = spec.output_hw(h, w)
    return {"g_a": tuple(input_hw), "h_a": y_hw, "h_s": (h, w), "g_s": y_hw}


def layer_inputs(specs: Sequence[LayerSpec], input_hw: Tuple[int, int]) -> List[Tuple[LayerSpec, Tuple[int, int]]]:
    """Each layer of a chain paired with its spatial input dims."""
    out = []
    h, w = input_hw
    for spec in specs:
        out.append((spec, (h, w)))
        h, w = spec.output_hw(h, w)
    return out


def codec_layer_inputs(
    config: ChannelConfig, input_hw: Tuple[int, int]
) -> List[Tuple[LayerSpec, Tuple[int, int]]]:
    starts = subnetwork_inputs(config, input_hw)
    out = []
    for subnetwork in ("g_a", "h_a", "h_s", "g_s"):
        out.extend(layer_inputs(config.subnetwork_specs(subnetwork), starts[subnetwork]))
    return out


def flops(
    cfg: Union[SubConfig, ChannelConfig, Sequence[LayerSpec]], input_hw: Tuple[int, int]
) -> int:
    """
    2 * MACs over all layers, bias and activations excluded. A SubConfig or
    ChannelConfig counts the whole codec; a list of LayerSpecs is a chain.
    """
    if isinstance(cfg, (SubConfig, ChannelConfig)):
        pairs = codec_layer_inputs(_as_channel_config(cfg), input_hw)
    else:
        pairs = layer_inputs(list(cfg), input_hw)
    return sum(FlopCount(spec, hw).flops for spec, hw in pairs)
