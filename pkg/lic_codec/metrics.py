"""
Image quality and rate metrics for 8-bit rasters.

PSNR is capped at PSNR_CAP_DB for identical inputs. MS-SSIM follows the
usual five-scale construction (11x11 Gaussian window, sigma 1.5, 2x2 mean
pooling between scales) averaged over colour channels; small images use
fewer scales with the remaining weights renormalized.
"""

import logging
import math
from typing import Dict, Tuple

import numpy as np
from scipy.signal import convolve2d

from utils import LicCodecError

logger = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0
PEAK = 255.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
GAUSSIAN_SIZE = 11
GAUSSIAN_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DEFAULT_HYBRID_WEIGHT = 0.5


class MetricError(LicCodecError):
    """Raised for metric inputs that cannot be compared."""

    pass


def _pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise MetricError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3) or a.size == 0:
        raise MetricError(f"expected a non-empty (H, W) or (H, W, C) raster, got {a.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    x, y = _pair(a, b)
    return float(np.mean((x - y) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(255^2 / MSE) over all channels, PSNR_CAP_DB when identical."""
    error = mse(a, b)
    if error == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(PEAK * PEAK / error))


def gaussian_window(size: int = GAUSSIAN_SIZE, sigma: float = GAUSSIAN_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def scale_count(height: int, width: int) -> int:
    """Scales whose coarsest level still fits an 11 px window (176, 88, 44, 22, 11)."""
    side = min(height, width)
    count = 1
    while count < len(MS_SSIM_WEIGHTS) and side >= GAUSSIAN_SIZE * 2**count:
        count += 1
    return count


def _ssim_terms(x: np.ndarray, y: np.ndarray, window: np.ndarray) -> Tuple[float, float]:
    """Mean SSIM and mean contrast-structure of one channel at one scale."""
    c1 = (K1 * PEAK) ** 2
    c2 = (K2 * PEAK) ** 2

    def blur(img: np.ndarray) -> np.ndarray:
        return convolve2d(img, window, mode="valid")

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = blur(x * x) - mu_xx
    var_y = blur(y * y) - mu_yy
    cov = blur(x * y) - mu_xy
    cs_map = (2.0 * cov + c2) / (var_x + var_y + c2)
    luminance = (2.0 * mu_xy + c1) / (mu_xx + mu_yy + c1)
    return float(np.mean(luminance * cs_map)), float(np.mean(cs_map))


def _pool(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    return img[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _signed_power(value: float, exponent: float) -> float:
    return math.copysign(abs(value) ** exponent, value)


def _ms_ssim_channel(x: np.ndarray, y: np.ndarray, scales: int, window: np.ndarray) -> float:
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    score = 1.0
    for level in range(scales):
        ssim, cs = _ssim_terms(x, y, window)
        if level == scales - 1:
            score *= _signed_power(ssim, weights[level])
        else:
            score *= _signed_power(cs, weights[level])
            x, y = _pool(x), _pool(y)
    return score


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Multi-scale SSIM in (-1, 1], averaged over channels."""
    x, y = _pair(a, b)
    if x.ndim == 2:
        x, y = x[..., np.newaxis], y[..., np.newaxis]
    height, width = x.shape[:2]
    scales = scale_count(height, width)
    size = min(GAUSSIAN_SIZE, min(height, width))
    if size % 2 == 0:
        size -= 1
    window = gaussian_window(size)
    if size < GAUSSIAN_SIZE:
        logger.debug(f"MS-SSIM on a {height}x{width} image: shrunken {size}x{size} window")
    return float(np.mean([_ms_ssim_channel(x[..., c], y[..., c], scales, window) for c in range(x.shape[2])]))


def bpp(stream_bytes: int, width: int, height: int) -> float:
    """8 * bytes / (width * height) on the original image dims."""
    if width <= 0 or height <= 0:
        raise MetricError(f"bpp needs a positive image area, got {width}x{height}")
    if stream_bytes < 0:
        raise MetricError(f"stream size cannot be negative: {stream_bytes}")
    return 8.0 * stream_bytes / (width * height)


def hybrid_score(a: np.ndarray, b: np.ndarray, w: float = DEFAULT_HYBRID_WEIGHT) -> float:
    """w*(1 - MS-SSIM) + (1 - w)*MSE/255^2; lower is better."""
    if not 0.0 <= w <= 1.0:
        raise MetricError(f"hybrid weight must lie in [0, 1], got {w}")
    distortion = mse(a, b) / (PEAK * PEAK)
    if w == 0.0:
        return distortion
    return w * (1.0 - ms_ssim(a, b)) + (1.0 - w) * distortion


def quality_report(a: np.ndarray, b: np.ndarray, stream_bytes: int) -> Dict[str, float]:
    """psnr, ms_ssim and bpp of a reconstruction, for reports."""
    height, width = np.asarray(a).shape[:2]
    return {"psnr": psnr(a, b), "ms_ssim": ms_ssim(a, b), "bpp": bpp(stream_bytes, width, height)}
