"""Magnitude-image quality metrics: PSNR and SSIM."""

from __future__ import annotations

import numpy as np
import torch
from scipy.signal import convolve2d

PSNR_CAP_DB = 99.0


def _mag(img) -> np.ndarray:
    if isinstance(img, torch.Tensor):
        img = img.detach().numpy()
    return np.abs(np.asarray(img)).astype(np.float64)


def psnr(ref, est) -> float:
    """20 log10(max|ref| / RMSE) on magnitude images, capped at 99 dB."""
    r, e = _mag(ref), _mag(est)
    if r.shape != e.shape:
        raise ValueError("shape mismatch")
    peak = r.max()
    if peak == 0:
        raise ValueError("reference image is zero")
    mse = np.mean((r - e) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(20.0 * np.log10(peak / np.sqrt(mse))))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    g = np.exp(-np.arange(-half, half + 1) ** 2 / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(ref, est, window_size: int = 11, sigma: float = 1.5) -> float:
    """Mean local SSIM over magnitude images (Gaussian window, stabilizers
    C1=(0.01 L)^2, C2=(0.03 L)^2 with L = max|ref|), averaged over windows
    fully inside the image."""
    r, e = _mag(ref), _mag(est)
    if r.shape != e.shape:
        raise ValueError("shape mismatch")
    if min(r.shape) < window_size:
        raise ValueError(f"images must be at least "
                         f"{window_size}x{window_size}")
    level = r.max()
    c1 = (0.01 * level) ** 2
    c2 = (0.03 * level) ** 2
    w = _gaussian_window(window_size, sigma)

    def f(x):
        return convolve2d(x, w, mode="valid")

    mu_r, mu_e = f(r), f(e)
    var_r = f(r * r) - mu_r ** 2
    var_e = f(e * e) - mu_e ** 2
    cov = f(r * e) - mu_r * mu_e
    num = (2 * mu_r * mu_e + c1) * (2 * cov + c2)
    den = (mu_r ** 2 + mu_e ** 2 + c1) * (var_r + var_e + c2)
    return float(np.mean(num / den))
