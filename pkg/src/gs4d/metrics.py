"""Quantitative image metrics for evaluation: PSNR and single-scale SSIM."""

from __future__ import annotations

import math

import numpy as np

from . import ssim as ssim_mod
from .errors import ParameterError

PSNR_CAP_DB = 99.0  # aggregate stand-in for identical images


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for float images in [0, 1]; inf for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a, b) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, k1=0.01, k2=0.03, L=1)."""
    return ssim_mod.ssim_value(a, b)


def capped_psnr(value: float) -> float:
    return min(value, PSNR_CAP_DB)
