"""Plain-array image operations: resampling, warping, and color conversion.

Everything here works on float64 numpy arrays (no autodiff); these are the
building blocks for augmentation and heatmap post-processing.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "bilinear_resize",
    "affine_warp",
    "rgb_to_hsv",
    "hsv_to_rgb",
]


def _sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``img`` (..., H, W) at fractional coordinates with edge clamping."""
    h, w = img.shape[-2], img.shape[-1]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    tl = img[..., y0, x0]
    tr = img[..., y0, x1]
    bl = img[..., y1, x0]
    br = img[..., y1, x1]
    top = tl * (1.0 - fx) + tr * fx
    bot = bl * (1.0 - fx) + br * fx
    return top * (1.0 - fy) + bot * fy


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of the trailing two axes."""
    h, w = img.shape[-2], img.shape[-1]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (
        np.linspace(0.0, h - 1.0, out_h)
        if out_h > 1
        else np.zeros(1)
    )
    xs = (
        np.linspace(0.0, w - 1.0, out_w)
        if out_w > 1
        else np.zeros(1)
    )
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return _sample_bilinear(img, grid_y, grid_x)


def affine_warp(img: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Warp (..., H, W) by the inverse-mapped 2x3 affine ``matrix``.

    ``matrix`` maps output pixel coordinates (y, x, 1) to source coordinates;
    samples are bilinear with edge clamping.
    """
    h, w = img.shape[-2], img.shape[-1]
    grid_y, grid_x = np.meshgrid(np.arange(h, dtype=np.float64),
                                 np.arange(w, dtype=np.float64), indexing="ij")
    src_y = matrix[0, 0] * grid_y + matrix[0, 1] * grid_x + matrix[0, 2]
    src_x = matrix[1, 0] * grid_y + matrix[1, 1] * grid_x + matrix[1, 2]
    return _sample_bilinear(img, src_y, src_x)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """(3, H, W) RGB in [0,1] -> HSV with hue in [0,1)."""
    r, g, b = rgb[0], rgb[1], rgb[2]
    maxc = np.max(rgb, axis=0)
    minc = np.min(rgb, axis=0)
    v = maxc
    rng = maxc - minc
    s = np.where(maxc > 0.0, rng / np.maximum(maxc, 1e-12), 0.0)
    safe = np.maximum(rng, 1e-12)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(
        maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc)
    )
    h = np.where(rng == 0.0, 0.0, (h / 6.0) % 1.0)
    return np.stack([h, s, v])


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """(3, H, W) HSV with hue in [0,1) -> RGB in [0,1]."""
    h, s, v = hsv[0] % 1.0, hsv[1], hsv[2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])
