"""PSNR and SSIM for images in [0, 1].

Color images are scored per channel and the channel scores averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidParameterError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0):
    """``10 log10(peak^2 / MSE)``; identical images give ``math.inf``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x, g):
    # separable Gaussian, keeping only fully-covered positions
    r = len(g) // 2
    y = correlate1d(x, g, axis=0, mode="constant")[r:-r]
    return correlate1d(y, g, axis=1, mode="constant")[:, r:-r]


def _ssim_channel(a, b, g, data_range):
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, data_range=1.0):
    """Mean SSIM over all positions where the 11x11 Gaussian window fits."""
    a, b = _pair(a, b)
    if a.ndim not in (2, 3):
        raise InvalidParameterError(f"expected (H, W) or (H, W, C), got {a.shape}")
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise InvalidParameterError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}px SSIM window")
    if np.array_equal(a, b):
        return 1.0
    g = gaussian_window()
    if a.ndim == 2:
        return _ssim_channel(a, b, g, data_range)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], g, data_range) for c in range(a.shape[2])]))


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    color_handling: str = "per-channel mean"

    def to_dict(self):
        return {
            "psnr": "inf" if math.isinf(self.psnr) else self.psnr,
            "ssim": self.ssim,
            "color_handling": self.color_handling,
        }


def compare(a, b):
    return MetricReport(psnr(a, b), ssim(a, b))
