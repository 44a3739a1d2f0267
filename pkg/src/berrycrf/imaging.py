"""Raster primitives: color conversion, enhancement, gradients, ridge filter, resampling.

Images are plain float64 numpy arrays of shape (H, W) or (H, W, 3) with
values in [0, 1].  All filters use replicate padding at the borders.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import ndimage

from ._validation import check_image, check_odd_window

# NTSC RGB -> YIQ.  Rows sum such that white maps to (1, 0, 0).
_RGB2YIQ = np.array(
    [
        [0.299, 0.587, 0.114],
        [0.595716, -0.274453, -0.321263],
        [0.211456, -0.522591, 0.311135],
    ]
)
_YIQ2RGB = np.linalg.inv(_RGB2YIQ)

# Sobel kernel responding to intensity change along rows (the u axis).
SOBEL_U = np.array([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]])
SOBEL_V = SOBEL_U.T


class GradientField(NamedTuple):
    iu: np.ndarray
    iv: np.ndarray
    magnitude: np.ndarray


class RidgeMap(NamedTuple):
    values: np.ndarray
    window: int


def rgb_to_yiq(img):
    img = check_image(img, channels=3)
    return img @ _RGB2YIQ.T


def yiq_to_rgb(img):
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"YIQ image must have shape (H, W, 3), got {arr.shape}")
    return arr @ _YIQ2RGB.T


def to_gray(img):
    """Luminance (the Y channel of YIQ); grayscale input is returned as is."""
    img = check_image(img)
    if img.ndim == 2:
        return img
    return img @ _RGB2YIQ[0]


def _gamut_chroma_scale(y, i, q):
    """Largest k in [0, 1] keeping YIQ (y, k*i, k*q) inside the RGB cube."""
    # chroma contribution to each RGB channel
    c = np.stack([i, q], axis=-1) @ _YIQ2RGB[:, 1:].T
    k = np.ones_like(y)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for ch in range(3):
            cj = c[..., ch]
            up = np.where(cj > 0, (1.0 - y) / cj, np.inf)
            down = np.where(cj < 0, y / -cj, np.inf)
            k = np.minimum(k, np.minimum(up, down))
    return np.clip(k, 0.0, 1.0)


def enhance(img, low_pct=1.0, high_pct=99.0):
    """Stretch luminance so the low/high percentiles land on 0 and 1.

    Chrominance is kept, except that it is scaled toward gray for pixels whose
    stretched color would leave the RGB cube.  Hue and the new luminance are
    preserved exactly, which makes the operation idempotent.
    """
    img = check_image(img, channels=3)
    yiq = img @ _RGB2YIQ.T
    y = yiq[..., 0]
    lo = np.percentile(y, low_pct, method="lower")
    hi = np.percentile(y, high_pct, method="higher")
    if hi - lo < 1e-6:
        return img.copy()
    y_new = np.clip((y - lo) / (hi - lo), 0.0, 1.0)
    k = _gamut_chroma_scale(y_new, yiq[..., 1], yiq[..., 2])
    out = np.stack([y_new, yiq[..., 1] * k, yiq[..., 2] * k], axis=-1) @ _YIQ2RGB.T
    return np.clip(out, 0.0, 1.0)


def sobel_gradients(img):
    """3x3 Sobel derivatives; ``iu`` along rows, ``iv`` along columns."""
    img = check_image(img, channels=1, min_size=3)
    # separable form (difference first) keeps flat regions exactly zero
    p = np.pad(img, 1, mode="edge")
    du = p[2:, :] - p[:-2, :]
    dv = p[:, 2:] - p[:, :-2]
    iu = du[:, :-2] + 2.0 * du[:, 1:-1] + du[:, 2:]
    iv = dv[:-2, :] + 2.0 * dv[1:-1, :] + dv[2:, :]
    return GradientField(iu, iv, np.hypot(iu, iv))


def stddev_ridge(img, window=5):
    """Local sample standard deviation over a ``window`` x ``window`` box.

    Box sums come from ``uniform_filter``, which uses running sums, so the
    cost does not grow with the window.
    """
    window = check_odd_window(window)
    img = check_image(img, channels=1)
    n = window * window
    # centering limits cancellation in E[x^2] - E[x]^2
    x = img - img.mean()
    m1 = ndimage.uniform_filter(x, size=window, mode="nearest")
    m2 = ndimage.uniform_filter(x * x, size=window, mode="nearest")
    var = (m2 - m1 * m1) * (n / (n - 1.0))
    var[var < 1e-14] = 0.0
    return RidgeMap(np.sqrt(var), window)


def _axis_coords(n_src, n_dst):
    if n_dst == 1:
        pos = np.array([(n_src - 1) / 2.0])
    else:
        pos = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
    i0 = np.clip(np.floor(pos).astype(np.intp), 0, n_src - 1)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, pos - i0


def resize_bilinear(img, new_width, new_height):
    """Corner-aligned bilinear resampling to ``new_height`` x ``new_width``."""
    img = check_image(img)
    if int(new_width) < 1 or int(new_height) < 1:
        raise ValueError(f"target size must be >= 1, got {new_width}x{new_height}")
    h, w = img.shape[:2]
    if (h, w) == (new_height, new_width):
        return img.copy()
    r0, r1, fr = _axis_coords(h, int(new_height))
    c0, c1, fc = _axis_coords(w, int(new_width))
    fr = fr.reshape((-1,) + (1,) * (img.ndim - 1))
    rows = img[r0] * (1.0 - fr) + img[r1] * fr
    fc = fc.reshape((1, -1) + (1,) * (img.ndim - 2))
    out = rows[:, c0] * (1.0 - fc) + rows[:, c1] * fc
    return np.clip(out, img.min(), img.max())
