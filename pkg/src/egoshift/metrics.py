"""PSNR and SSIM for 8-bit frames, and per-video aggregation."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

MAX_VALUE = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA = np.array([0.299, 0.587, 0.114])


def _check_pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """PSNR in dB over all channels jointly; identical images give ``inf``."""
    a, b = _check_pair(a, b)
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(MAX_VALUE**2 / mse)


def to_luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img @ LUMA
    return img


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b):
    """Local SSIM over every fully contained 11x11 Gaussian window."""
    a, b = _check_pair(a, b)
    x = to_luma(a)
    y = to_luma(b)
    if min(x.shape) < SSIM_WINDOW:
        raise DimensionError(f"image {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    w = gaussian_window()
    C1 = (SSIM_K1 * MAX_VALUE) ** 2
    C2 = (SSIM_K2 * MAX_VALUE) ** 2
    X = sliding_window_view(x, w.shape)
    Y = sliding_window_view(y, w.shape)
    mu_x = np.einsum("ijkl,kl->ij", X, w)
    mu_y = np.einsum("ijkl,kl->ij", Y, w)
    sxx = np.einsum("ijkl,kl->ij", X * X, w) - mu_x * mu_x
    syy = np.einsum("ijkl,kl->ij", Y * Y, w) - mu_y * mu_y
    sxy = np.einsum("ijkl,kl->ij", X * Y, w) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + C1) * (2.0 * sxy + C2)
    den = (mu_x * mu_x + mu_y * mu_y + C1) * (sxx + syy + C2)
    return num / den


def ssim(a, b):
    """Mean SSIM on Rec.601 luma (Wang et al. constants, range 255)."""
    return float(np.mean(ssim_map(a, b)))


def video_metrics(pred, ref):
    """Per-frame and mean PSNR/SSIM for two equal-length frame sequences."""
    if len(pred) != len(ref):
        raise DimensionError(f"video lengths differ: {len(pred)} vs {len(ref)}")
    if len(pred) == 0:
        raise DimensionError("empty video")
    rows = [{"frame": i, "psnr": psnr(p, r), "ssim": ssim(p, r)} for i, (p, r) in enumerate(zip(pred, ref))]
    return {
        "frames": rows,
        "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
        "mean_ssim": float(np.mean([r["ssim"] for r in rows])),
        "n_frames": len(rows),
    }
