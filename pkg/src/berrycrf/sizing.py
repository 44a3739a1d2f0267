"""Pixel-to-millimetre conversion, diameter histograms and comparison statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LABEL_WIDTH_MM = 13.0
HISTOGRAM_STEP_MM = 0.5


@dataclass(frozen=True)
class ScaleCalibration:
    label_width_px: float
    label_width_mm: float = LABEL_WIDTH_MM

    @property
    def ratio(self):
        """Millimetres per pixel."""
        return self.label_width_mm / self.label_width_px


def calibrate_scale(b, label_width_mm=LABEL_WIDTH_MM):
    """Calibration from the observed width ``b`` (px) of the reference label."""
    b = float(b)
    if not math.isfinite(b) or b <= 0:
        raise ValueError(f"label width in pixels must be positive, got {b!r}")
    return ScaleCalibration(b, float(label_width_mm))


def measure_berries(radii_px, cal: ScaleCalibration):
    """Diameters in mm.  Circles are stored by radius, so diameter = 2 * radius."""
    r = np.asarray([getattr(c, "radius", c) for c in radii_px], dtype=np.float64)
    return cal.ratio * 2.0 * r


def round_half_up(x, step=HISTOGRAM_STEP_MM):
    return np.floor(np.asarray(x, dtype=np.float64) / step + 0.5) * step


def build_histogram(diameters_mm, step=HISTOGRAM_STEP_MM):
    """Counts per ``step`` bin (nearest bin, ties upward); empty bins omitted."""
    bins = round_half_up(diameters_mm, step)
    values, counts = np.unique(bins, return_counts=True)
    return {float(v): int(c) for v, c in zip(values, counts)}


@dataclass
class SizeSummary:
    n: int
    mean: float | None
    std: float | None
    std_degenerate: bool = False
    md: float | None = None
    mad: float | None = None
    sizing_available: bool = True


def summarize(diameters_mm, manual_mean=None):
    """Mean and sample std of the unrounded diameters, plus MD/MAD to a manual mean."""
    d = np.asarray(diameters_mm, dtype=np.float64)
    if d.size == 0:
        return SizeSummary(0, None, None, sizing_available=False)
    mean = float(d.mean())
    degenerate = d.size < 2
    std = 0.0 if degenerate else float(d.std(ddof=1))
    md = mad = None
    if manual_mean is not None:
        md = mean - float(manual_mean)
        mad = abs(md)
    return SizeSummary(int(d.size), mean, std, degenerate, md, mad)


def batch_correlation(pairs):
    """Pearson correlation of per-image (framework mean, manual mean) pairs."""
    arr = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
    if len(arr) < 2:
        raise ValueError("need at least 2 images with both means")
    a = arr[:, 0] - arr[:, 0].mean()
    b = arr[:, 1] - arr[:, 1].mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0:
        return 0.0
    return float(np.clip(float(a @ b) / den, -1.0, 1.0))


def batch_differences(mds):
    """Batch MD (mean of per-image MD) and MAD (mean of per-image |MD|)."""
    mds = np.asarray([m for m in mds if m is not None], dtype=np.float64)
    if mds.size == 0:
        return None, None
    return float(mds.mean()), float(np.abs(mds).mean())
