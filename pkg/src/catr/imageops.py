"""Plain-numpy raster helpers shared by losses, metrics, and inference."""

from __future__ import annotations

import numpy as np


def avg_pool_mask(mask: np.ndarray, k: int) -> np.ndarray:
    """Coverage fractions on a k-times coarser grid; works on (..., H, W)."""
    *lead, h, w = mask.shape
    if h % k or w % k:
        raise ValueError(f"avg_pool_mask: {h}x{w} not divisible by {k}")
    return mask.astype(np.float64).reshape(*lead, h // k, k, w // k, k).mean(axis=(-3, -1))


def max_pool_mask(mask: np.ndarray, k: int) -> np.ndarray:
    *lead, h, w = mask.shape
    if h % k or w % k:
        raise ValueError(f"max_pool_mask: {h}x{w} not divisible by {k}")
    return mask.reshape(*lead, h // k, k, w // k, k).max(axis=(-3, -1))


def _axis_weights(n: int, factor: int):
    centers = (np.arange(n * factor) + 0.5) / factor - 0.5
    lo = np.clip(np.floor(centers).astype(int), 0, n - 1)
    hi = np.clip(lo + 1, 0, n - 1)
    frac = np.clip(centers - np.floor(centers), 0.0, 1.0)
    return lo, hi, frac


def bilinear_upsample(arr: np.ndarray, factor: int) -> np.ndarray:
    """Sample-center-aligned bilinear upsampling of (..., h, w) by `factor`."""
    if factor == 1:
        return arr.astype(np.float64, copy=True)
    *lead, h, w = arr.shape
    y0, y1, fy = _axis_weights(h, factor)
    x0, x1, fx = _axis_weights(w, factor)
    a = arr.astype(np.float64)
    top = a[..., y0, :][..., :, x0] * (1 - fx) + a[..., y0, :][..., :, x1] * fx
    bot = a[..., y1, :][..., :, x0] * (1 - fx) + a[..., y1, :][..., :, x1] * fx
    return top * (1 - fy[..., :, None]) + bot * fy[..., :, None]
