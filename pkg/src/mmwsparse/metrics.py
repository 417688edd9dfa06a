"""Image quality on 20 dB maximum-value projections.

Volumes are collapsed along range by taking the largest voxel magnitude,
converted to dB relative to their own peak, clipped to the dynamic range and
mapped affinely onto [0, 1].  RMSE and PSNR are reported on the 0-255 scale,
SSIM on the [0, 1] scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .geometry import SceneVolume

DYNAMIC_RANGE_DB = 20.0
PEAK = 255.0


@dataclass(frozen=True, eq=False)
class ProjectionImage:
    """dB-clipped maximum projection with values in [0, 1]."""

    values: np.ndarray
    dynamic_range_db: float = DYNAMIC_RANGE_DB

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 2:
            raise ValueError("projection image must be 2-D")
        if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
            raise ValueError("projection values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_uint8(self) -> np.ndarray:
        return np.floor(self.values * 255 + 0.5).astype(np.uint8)


@dataclass(frozen=True)
class Scores:
    rmse: float
    psnr: float
    ssim: float


def max_projection(vol: SceneVolume | np.ndarray, dynamic_range_db: float = DYNAMIC_RANGE_DB) -> ProjectionImage:
    """Range-direction maximum projection, normalised by its own peak.

    An all-zero volume gives an all-zero image.
    """
    data = vol.data if isinstance(vol, SceneVolume) else np.asarray(vol)
    if data.size == 0:
        raise ValueError("volume is empty")
    mag = np.abs(data).max(axis=-1) if data.ndim == 3 else np.abs(data)
    peak = mag.max()
    if peak == 0:
        return ProjectionImage(np.zeros(mag.shape), dynamic_range_db)
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag / peak)
    db = np.clip(db, -dynamic_range_db, 0.0)
    return ProjectionImage((db + dynamic_range_db) / dynamic_range_db, dynamic_range_db)


def _values(img) -> np.ndarray:
    return img.values if isinstance(img, ProjectionImage) else np.asarray(img, dtype=float)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    return a, b


def rmse(a, b) -> float:
    """Root mean square error on the 0-255 scale."""
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((PEAK * a - PEAK * b) ** 2)))


def psnr_from_rmse(err: float) -> float:
    if err == 0:
        return math.inf
    return 20 * math.log10(PEAK / err)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; identical images give ``inf``."""
    return psnr_from_rmse(rmse(a, b))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def ssim(a, b, win_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean structural similarity with a Gaussian window.

    Local statistics are evaluated at every position where the full window fits
    (no padding) and use the sample covariance normalisation.
    """
    a, b = _pair(a, b)
    if min(a.shape) < win_size:
        raise ValueError(f"images must be at least {win_size}x{win_size}, got {a.shape}")
    w = _gaussian_window(win_size, sigma)
    n = win_size * win_size
    cov_norm = n / (n - 1)

    def blur(x):
        x = correlate1d(x, w, axis=0, mode="reflect")
        return correlate1d(x, w, axis=1, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    s_aa = cov_norm * (blur(a * a) - mu_a * mu_a)
    s_bb = cov_norm * (blur(b * b) - mu_b * mu_b)
    s_ab = cov_norm * (blur(a * b) - mu_a * mu_b)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2)
    smap = num / den
    pad = (win_size - 1) // 2
    return float(smap[pad:-pad, pad:-pad].mean())


def evaluate(reference, test) -> Scores:
    err = rmse(reference, test)
    return Scores(err, psnr_from_rmse(err), ssim(reference, test))


def evaluate_volumes(reference: SceneVolume | np.ndarray, test: SceneVolume | np.ndarray) -> Scores:
    return evaluate(max_projection(reference), max_projection(test))
