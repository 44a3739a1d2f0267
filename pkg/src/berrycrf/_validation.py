"""Input validation helpers shared by the estimators and free functions."""
from __future__ import annotations

import numbers

import numpy as np

from .exceptions import EmptyImageError


def check_image(img, *, channels=None, min_size=1, name="image"):
    """Return ``img`` as a float64 array of shape (H, W) or (H, W, 3).

    Values must already be normalized to [0, 1].  ``channels`` restricts the
    accepted layout to 1 (grayscale) or 3 (color).
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ValueError(f"{name} must have shape (H, W) or (H, W, 3), got {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EmptyImageError(f"{name} has zero area: {arr.shape}")
    n_ch = 1 if arr.ndim == 2 else 3
    if channels is not None and n_ch != channels:
        raise ValueError(f"{name} must have {channels} channel(s), got {n_ch}")
    if min(arr.shape[:2]) < min_size:
        raise ValueError(f"{name} must be at least {min_size}x{min_size}, got {arr.shape[:2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_odd_window(window, minimum=3):
    if not isinstance(window, numbers.Integral) or window < minimum or window % 2 == 0:
        raise ValueError(f"window must be an odd integer >= {minimum}, got {window!r}")
    return int(window)


def check_fraction(value, name, *, low_open=True, high_closed=True):
    v = float(value)
    lo_ok = v > 0 if low_open else v >= 0
    hi_ok = v <= 1 if high_closed else v < 1
    if not (lo_ok and hi_ok):
        raise ValueError(f"{name} out of range: {value!r}")
    return v


def check_positive(value, name):
    v = float(value)
    if not np.isfinite(v) or v <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return v


def check_radius_range(radius_range, minimum=2):
    lo, hi = (int(r) for r in radius_range)
    if lo < minimum or hi < lo:
        raise ValueError(f"invalid radius range {radius_range!r} (need {minimum} <= min <= max)")
    return lo, hi
