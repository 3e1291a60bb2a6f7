#!/usr/bin/env python3
"""
Raster Import/Export for the LIC Codec
======================================

Validation, decoding and encoding of 8-bit RGB rasters in the two
uncompressed-friendly containers the codec accepts (PNG and BMP), plus the
mapping between rasters and float tensors (v / 255 and its rounded inverse).
"""

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from model_store import SplitMix64
from tensor_core import Tensor, round_half_away
from utils import LicCodecError, PerformanceTimer


class ImageValidationError(LicCodecError):
    """Raised when image validation fails."""

    pass


class ImageProcessingError(LicCodecError):
    """Raised when image processing fails."""

    pass


@dataclass
class RasterInfo:
    """What validation learned about an image file."""

    file_path: str
    file_name: str
    file_size: int
    format_name: str
    width: int
    height: int
    color_mode: str
    has_alpha: bool


class ImageIO:
    """
    Validated raster I/O.

    Any PIL colour mode is converted to RGB on import; alpha channels are
    dropped.
    """

    SUPPORTED_FORMATS = {
        "png": {"extensions": [".png"], "pil_format": "PNG"},
        "bmp": {"extensions": [".bmp"], "pil_format": "BMP"},
    }

    def __init__(self, max_file_size: int = 512 * 1024 * 1024):
        self.max_file_size = max_file_size
        self._format_registry = self._build_format_registry()

    def _build_format_registry(self) -> Dict[str, str]:
        registry = {}
        for format_name, info in self.SUPPORTED_FORMATS.items():
            for ext in info["extensions"]:
                registry[ext.lower()] = format_name
        return registry

    def format_for(self, path: Union[str, Path]) -> str:
        extension = Path(path).suffix.lower()
        if extension not in self._format_registry:
            raise ImageValidationError(f"Unsupported file extension: {extension or '(none)'} (expected .png or .bmp)")
        return self._format_registry[extension]

    def validate(self, file_path: Union[str, Path]) -> RasterInfo:
        """
        Check existence, size, extension and decodability.

        Raises:
            ImageValidationError: If any check fails
        """
        path = Path(file_path)
        if not path.exists():
            raise ImageValidationError(f"File does not exist: {path}")
        if not path.is_file():
            raise ImageValidationError(f"Path is not a file: {path}")

        try:
            file_size = path.stat().st_size
        except OSError as e:
            raise ImageValidationError(f"Cannot access file stats: {e}") from e
        if file_size == 0:
            raise ImageValidationError(f"File is empty: {path}")
        if file_size > self.max_file_size:
            raise ImageValidationError(f"File too large: {file_size} bytes (max: {self.max_file_size} bytes)")

        format_name = self.format_for(path)
        try:
            with PILImage.open(path) as img:
                img.verify()
            with PILImage.open(path) as img:
                width, height = img.size
                mode = img.mode
                has_alpha = mode in ("RGBA", "LA", "PA") or "transparency" in img.info
        except (OSError, UnidentifiedImageError, SyntaxError) as e:
            raise ImageValidationError(f"Invalid image format or corrupted file {path}: {e}") from e

        return RasterInfo(str(path.absolute()), path.name, file_size, format_name, width, height, mode, has_alpha)

    def read_raster(self, file_path: Union[str, Path]) -> np.ndarray:
        """Decode an image into an (H, W, 3) uint8 RGB array."""
        info = self.validate(file_path)
        try:
            with PILImage.open(file_path) as img:
                rgb = img.convert("RGB")
                raster = np.asarray(rgb, dtype=np.uint8).copy()
        except OSError as e:
            raise ImageProcessingError(f"Failed to decode {file_path}: {e}") from e
        if raster.shape != (info.height, info.width, 3):
            raise ImageProcessingError(f"Unexpected raster shape {raster.shape} for {file_path}")
        return raster

    def write_raster(self, raster: np.ndarray, file_path: Union[str, Path]) -> None:
        """Encode an (H, W, 3) uint8 array as PNG or BMP, chosen by extension."""
        format_name = self.format_for(file_path)
        arr = np.asarray(raster)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ImageProcessingError(f"Raster must be (H, W, 3) uint8, got {arr.shape} {arr.dtype}")
        path = Path(file_path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            PILImage.fromarray(arr).save(path, format=self.SUPPORTED_FORMATS[format_name]["pil_format"])
        except (OSError, ValueError) as e:
            raise ImageProcessingError(f"Failed to write {path}: {e}") from e

    def list_images(self, directory: Union[str, Path]) -> List[Path]:
        """Supported image files of a directory, sorted by name."""
        root = Path(directory)
        if not root.is_dir():
            raise ImageValidationError(f"Not a directory: {root}")
        return sorted(p for p in root.iterdir() if p.is_file() and p.suffix.lower() in self._format_registry)


def raster_to_tensor(raster: np.ndarray) -> Tensor:
    """(H, W, 3) uint8 to a (1, 3, H, W) tensor with values v / 255."""
    arr = np.asarray(raster)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageProcessingError(f"Raster must be (H, W, 3), got {arr.shape}")
    return Tensor(arr.astype(np.float64).transpose(2, 0, 1)[np.newaxis] / 255.0)


def tensor_to_raster(x: Tensor) -> np.ndarray:
    """(1, 3, H, W) tensor in [0, 1] to (H, W, 3) uint8 via round_half_away(v * 255)."""
    n, c, _, _ = x.dims
    if n != 1 or c != 3:
        raise ImageProcessingError(f"Expected a (1, 3, H, W) tensor, got {x.dims}")
    values = np.clip(round_half_away(x.data[0] * 255.0), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(values.transpose(1, 2, 0))


def load_image(file_path: Union[str, Path]) -> Tensor:
    with PerformanceTimer(f"Load {Path(file_path).name}", quiet=True):
        return raster_to_tensor(ImageIO().read_raster(file_path))


def save_image(x: Tensor, file_path: Union[str, Path]) -> np.ndarray:
    raster = tensor_to_raster(x)
    ImageIO().write_raster(raster, file_path)
    return raster


def raster_digest(raster: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(raster).tobytes()).hexdigest()


def synthetic_raster(height: int, width: int, seed: int) -> np.ndarray:
    """Deterministic smooth-plus-noise RGB test raster."""
    rng = SplitMix64(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    base = np.stack([127.5 + 100.0 * np.sin(xx / 9.0 + c) * np.cos(yy / 13.0 - c) for c in range(3)], axis=-1)
    noise = (rng.uniform(height * width * 3).reshape(height, width, 3) - 0.5) * 40.0
    return np.clip(round_half_away(base + noise), 0, 255).astype(np.uint8)
