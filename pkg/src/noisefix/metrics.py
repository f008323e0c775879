"""Fidelity metrics on the internal [-1, 1] image convention."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor3

__all__ = ["psnr", "ssim"]


def _pair(a: Tensor3, b: Tensor3):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a.data, b.data


def psnr(a: Tensor3, b: Tensor3, peak: float = 2.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images are identical."""
    x, y = _pair(a, b)
    mse = float(((x - y) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _ssim_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def _local_means(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Valid-mode weighted means of a single-channel image."""
    size = window.shape[0]
    h, w = x.shape
    out = np.zeros((h - size + 1, w - size + 1))
    for a in range(size):
        for b in range(size):
            out += window[a, b] * x[a:a + h - size + 1, b:b + w - size + 1]
    return out


def ssim(a: Tensor3, b: Tensor3, peak: float = 2.0) -> float:
    """Mean structural similarity over fully interior 11x11 Gaussian windows.

    Standard stabilizers C1 = (0.01 peak)^2 and C2 = (0.03 peak)^2; the
    per-window statistics use the Gaussian-weighted population moments.
    Channels are averaged with equal weight.
    """
    x, y = _pair(a, b)
    size = 11
    if a.height < size or a.width < size:
        raise ValueError(f"images must be at least {size}x{size} for ssim")
    window = _ssim_window(size)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    scores = []
    for ch in range(a.channels):
        xa, yb = x[:, :, ch], y[:, :, ch]
        mu_x = _local_means(xa, window)
        mu_y = _local_means(yb, window)
        var_x = _local_means(xa * xa, window) - mu_x ** 2
        var_y = _local_means(yb * yb, window) - mu_y ** 2
        cov = _local_means(xa * yb, window) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        scores.append((num / den).mean())
    return float(np.mean(scores))
