#!/usr/bin/env python3
"""
Command-line interface for the LIC codec.

Every command is a thin wrapper around one library operation:

    lic-codec init --config origin --seed 7 --output origin.licw
    lic-codec encode --model origin.licw --input kodim01.png --output kodim01.licp
    lic-codec decode --model origin.licw --input kodim01.licp --output kodim01.png
    lic-codec calibrate --model origin.licw --images calib/ --quant-mode hs-int --output hs.licw
    lic-codec bench --model origin.licw --images kodak/ --workers 4 --report bench.json
    lic-codec measure-lut --config nas --input-size 256x256 --output nas.lut
    lic-codec search --space paired --lut nas.lut --max-latency-ms 20 --output search.json
    lic-codec info --input kodim01.licp

Failures print exactly one line to stderr, ``error: <ErrorClass>: <message>``,
and exit with 2 for usage errors or 1 for everything else.
"""

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence, TextIO, Tuple

from colorama import Fore, Style, just_fix_windows_console

from bench import BenchSettings, bench_run
from codec_pipeline import BITSTREAM_MAGIC, bitstream_info, decode_image, encode_image
from image_io import ImageIO, load_image, save_image
from latency_table import (
    MIN_REPETITIONS,
    MIN_WARMUP,
    REFERENCE_SUBNETWORK_LATENCY,
    LatencyTable,
    codec_layer_keys,
    measure_latency_table,
    parse_shape,
    reference_table,
)
from model_store import (
    CHANNEL_CONFIGS,
    QUANT_MODES,
    WEIGHT_MAGIC,
    ModelWeights,
    init_weights,
    load_weights,
    resolve_channel_config,
    save_weights,
)
from nas_search import SEARCH_MODES, SearchConstraints, flops_scorer, latency_scorer, scores_file_scorer, search
from quantization import CalibrationPolicy, convert_to_int8
from supernet import BUILTIN_SPACES, resolve_search_space
from utils import LicCodecError, format_bytes, read_bytes, safe_json_export, setup_logging, write_bytes_atomic

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
SCORERS = ("latency", "flops", "scores-file")


class CliError(LicCodecError):
    """Raised for command-line usage errors."""

    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose errors become CliError instead of a usage dump."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise CliError(message)


@dataclass(frozen=True)
class CliConfig:
    """Options shared by the commands."""

    model_path: Optional[Path] = None
    config_name: str = "origin"
    workers: int = 1
    seed: int = 0
    output: Optional[Path] = None
    quant_mode: str = "hs-int"

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise CliError(f"--workers must be >= 1, got {self.workers}")
        if self.quant_mode not in QUANT_MODES:
            raise CliError(f"--quant-mode must be one of {QUANT_MODES}, got {self.quant_mode!r}")
        if self.config_name not in CHANNEL_CONFIGS and not Path(self.config_name).is_file():
            choices = ", ".join(sorted(CHANNEL_CONFIGS))
            raise CliError(f"--config must be one of {choices} or a JSON file, got {self.config_name!r}")

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "CliConfig":
        def get(name: str, default: Any) -> Any:
            value = getattr(args, name, None)
            return default if value is None else value

        return cls(
            model_path=get("model", None),
            config_name=get("config", "origin"),
            workers=get("workers", 1),
            seed=get("seed", 0),
            output=get("output", None),
            quant_mode=get("quant_mode", "hs-int"),
        )

    def load_model(self) -> ModelWeights:
        if self.model_path is None:
            raise CliError("--model is required")
        return load_weights(self.model_path)


def _paint(text: str, color: str, stream: TextIO) -> str:
    isatty = getattr(stream, "isatty", None)
    if isatty is not None and isatty():
        return f"{color}{text}{Style.RESET_ALL}"
    return text


def _say(text: str) -> None:
    print(_paint(text, Fore.GREEN, sys.stdout))


def _parse_size(text: str) -> Tuple[int, int]:
    """``HxW`` to (height, width)."""
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError as e:
        raise CliError(f"size must look like HxW, got {text!r}") from e
    if h < 1 or w < 1:
        raise CliError(f"size must be positive, got {text!r}")
    return h, w


# Commands


def cmd_init(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    model = init_weights(resolve_channel_config(config.config_name), config.seed)
    model_id = save_weights(model, config.output)
    _say(f"Wrote {config.config_name} weights (seed {config.seed}, id {model_id:016x}) to {config.output}")
    return EXIT_OK


def cmd_encode(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    model = config.load_model()
    x = load_image(args.input)
    data = encode_image(x, model)
    write_bytes_atomic(data, config.output)
    info = bitstream_info(data)
    size = f"{info['width']}x{info['height']}"
    _say(f"Encoded {args.input} ({size}) to {config.output}: {format_bytes(len(data))}, {info['bpp']:.4f} bpp")
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    model = config.load_model()
    x = decode_image(read_bytes(args.input), model)
    save_image(x, config.output)
    _, _, height, width = x.dims
    _say(f"Decoded {args.input} to {config.output} ({width}x{height})")
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    model = config.load_model()
    if config.quant_mode != "float" and args.images is None:
        raise CliError(f"--images is required for --quant-mode {config.quant_mode}")
    paths = ImageIO().list_images(args.images) if config.quant_mode != "float" else []
    images = [load_image(p) for p in paths]
    policy = CalibrationPolicy.parse(args.policy)
    converted = convert_to_int8(model, images, config.quant_mode, policy, workers=config.workers)
    model_id = save_weights(converted, config.output)
    _say(f"Wrote {config.quant_mode} model {model_id:016x} ({len(images)} calibration images) to {config.output}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    model = config.load_model()
    report = bench_run(model, args.images, settings=BenchSettings(workers=config.workers, warmup=args.warmup))
    if args.report:
        report.save(args.report)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_measure_lut(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    if args.shape:
        keys = [parse_shape(s) for s in args.shape]
    else:
        keys = codec_layer_keys(resolve_channel_config(config.config_name), _parse_size(args.input_size))
    table = measure_latency_table(keys, repetitions=args.repetitions, warmup=args.warmup)
    table.save(config.output)
    _say(f"Measured {len(table)} latency records on {table.device}; wrote {config.output}")
    return EXIT_OK


def cmd_search(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    space = resolve_search_space(args.space)
    input_hw = _parse_size(args.input_size)
    if args.lut:
        table: Optional[LatencyTable] = LatencyTable.load(args.lut)
    elif args.reference_device:
        table = reference_table(args.reference_device)
    else:
        table = None

    constraints = SearchConstraints(args.max_flops, args.max_latency_ms, table, input_hw)
    if args.scorer == "latency":
        if table is None:
            raise CliError("--scorer latency needs --lut or --reference-device")
        scorer = latency_scorer(table, input_hw)
    elif args.scorer == "flops":
        scorer = flops_scorer(input_hw)
    else:
        if not args.scores:
            raise CliError("--scorer scores-file needs --scores")
        scorer = scores_file_scorer(args.scores)

    result = search(space, constraints, scorer, args.budget, config.seed, args.mode, config.workers)
    if config.output:
        result.save(config.output)
    if result.best is None:
        print(_paint(f"No configuration of {space.name} meets the constraints", Fore.YELLOW, sys.stdout))
    else:
        _say(f"best={result.best.label()} score={result.best_score:.6g} evaluations={result.evaluations}")
    return EXIT_OK


def _weights_info(path: Path) -> Dict[str, Any]:
    model = load_weights(path)
    return {
        "kind": "weights",
        "model_id": f"{model.model_id:016x}",
        "quant_mode": model.quant_mode,
        "parameters": model.parameter_count,
        **{k: ",".join(str(v) for v in vs) for k, vs in model.config.to_dict().items()},
    }


def cmd_info(args: argparse.Namespace) -> int:
    path = Path(args.input)
    head = read_bytes(path)[:4]
    if head == BITSTREAM_MAGIC:
        info = {"kind": "bitstream", **bitstream_info(read_bytes(path))}
    elif head == WEIGHT_MAGIC:
        info = _weights_info(path)
    else:
        raise CliError(f"{path} is neither a LICP bitstream nor a LICW weight file")
    if args.json:
        safe_json_export(info, args.json)
    for key, value in info.items():
        print(f"{key}: {value}")
    return EXIT_OK


# Parser


def _add_common(parser: argparse.ArgumentParser, *names: str) -> None:
    options: Dict[str, Callable[[], None]] = {
        "model": lambda: parser.add_argument("--model", type=Path, required=True, help="LICW weight file"),
        "config": lambda: parser.add_argument(
            "--config", default="origin", help=f"channel config: {', '.join(sorted(CHANNEL_CONFIGS))} or a JSON file"
        ),
        "workers": lambda: parser.add_argument("--workers", type=int, default=1, help="worker threads (>= 1)"),
        "seed": lambda: parser.add_argument("--seed", type=int, default=0, help="deterministic seed"),
        "output": lambda: parser.add_argument("--output", type=Path, required=True, help="output file"),
    }
    for name in names:
        options[name]()


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lic-codec", description="Learned image codec with int8 hyper-synthesis and channel search")
    parser.add_argument("--log-level", default="WARNING", help="DEBUG, INFO, WARNING, ERROR or CRITICAL")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = commands.add_parser("init", help="write seed-initialized weights")
    _add_common(p, "config", "seed", "output")
    p.set_defaults(handler=cmd_init)

    p = commands.add_parser("encode", help="compress a .png/.bmp image")
    _add_common(p, "model", "output")
    p.add_argument("--input", type=Path, required=True, help="image to compress")
    p.set_defaults(handler=cmd_encode)

    p = commands.add_parser("decode", help="decompress a bitstream to .png/.bmp")
    _add_common(p, "model", "output")
    p.add_argument("--input", type=Path, required=True, help="LICP bitstream")
    p.set_defaults(handler=cmd_decode)

    p = commands.add_parser("calibrate", help="post-training int8 conversion")
    _add_common(p, "model", "workers", "output")
    p.add_argument("--images", type=Path, help="directory of calibration images (not needed for float)")
    p.add_argument("--quant-mode", choices=QUANT_MODES, default="hs-int", help="subnetworks run in int8")
    p.add_argument("--policy", default="percentile(99.99)", help="activation policy: absmax or percentile(p)")
    p.set_defaults(handler=cmd_calibrate)

    p = commands.add_parser("bench", help="latency, throughput and memory benchmark")
    _add_common(p, "model", "workers")
    p.add_argument("--images", type=Path, required=True, help="directory of .png/.bmp images")
    p.add_argument("--warmup", type=int, default=1, help="untimed warmup iterations")
    p.add_argument("--report", type=Path, help="report file (.json, .csv or text)")
    p.set_defaults(handler=cmd_bench)

    p = commands.add_parser("measure-lut", help="measure a latency lookup table on this host")
    _add_common(p, "config", "output")
    p.add_argument("--shape", action="append", help="kind,in_c,out_c,k,s,h,w (repeatable)")
    p.add_argument("--input-size", default="256x256", help="image HxW when measuring a config's layers")
    p.add_argument("--repetitions", type=int, default=MIN_REPETITIONS, help="timed runs per shape")
    p.add_argument("--warmup", type=int, default=MIN_WARMUP, help="untimed runs per shape")
    p.set_defaults(handler=cmd_measure_lut)

    p = commands.add_parser("search", help="constrained channel search")
    _add_common(p, "workers", "seed")
    p.add_argument("--space", default="paired", help=f"search space: {', '.join(BUILTIN_SPACES)} or a JSON file")
    p.add_argument("--lut", type=Path, help="latency table file")
    p.add_argument(
        "--reference-device", choices=sorted(REFERENCE_SUBNETWORK_LATENCY), help="use built-in reference latencies"
    )
    p.add_argument("--max-flops", type=int, help="FLOP budget")
    p.add_argument("--max-latency-ms", type=float, help="latency budget")
    p.add_argument("--input-size", default="1088x1920", help="image HxW for FLOPs and latency")
    p.add_argument("--scorer", choices=SCORERS, default="flops", help="objective to minimize")
    p.add_argument("--scores", type=Path, help="JSON map of config label to score (--scorer scores-file)")
    p.add_argument("--budget", type=int, help="maximum scorer evaluations during evolution")
    p.add_argument("--mode", choices=SEARCH_MODES, default="auto", help="search strategy")
    p.add_argument("--output", type=Path, help="JSON search report")
    p.set_defaults(handler=cmd_search)

    p = commands.add_parser("info", help="describe a bitstream or weight file")
    p.add_argument("--input", type=Path, required=True, help="LICP or LICW file")
    p.add_argument("--json", type=Path, help="also write the description as JSON")
    p.set_defaults(handler=cmd_info)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    just_fix_windows_console()
    try:
        args = build_parser().parse_args(list(sys.argv[1:] if argv is None else argv))
        setup_logging(args.log_level)
        return args.handler(args)
    except CliError as e:
        code = EXIT_USAGE
        error: BaseException = e
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        code = EXIT_RUNTIME
        error = e
    message = " ".join(str(error).split())
    print(_paint(f"error: {type(error).__name__}: {message}", Fore.RED, sys.stderr), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
