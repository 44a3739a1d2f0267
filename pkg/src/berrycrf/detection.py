"""Circle detection: gradient voting, peak extraction, signature radius, refinement.

Coordinates are (row, col).  The detector returns every candidate above the
weak peak threshold and flags the subset that also clears the strong
threshold as references, so the reference set is always contained in the
candidate set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator

from ._validation import check_fraction, check_image, check_odd_window, check_radius_range
from .exceptions import EmptyDetectionError
from .imaging import GradientField, RidgeMap, sobel_gradients, stddev_ridge, to_gray

# votes are generated in chunks of this many source pixels to bound memory
_VOTE_CHUNK = 20000


class Circle(NamedTuple):
    row: int
    col: int
    radius: int


@dataclass
class CandidateSet:
    """Detected circles in descending peak-response order.

    ``reference_flags[i]`` marks candidate ``i`` as a member of the
    reference set.
    """

    candidates: list = field(default_factory=list)
    reference_flags: list = field(default_factory=list)
    responses: list = field(default_factory=list)

    def __len__(self):
        return len(self.candidates)

    @property
    def references(self):
        return [c for c, f in zip(self.candidates, self.reference_flags) if f]

    @property
    def reference_indices(self):
        return [i for i, f in enumerate(self.reference_flags) if f]

    def centers(self):
        return np.array([(c.row, c.col) for c in self.candidates], dtype=np.float64).reshape(-1, 2)

    def radii(self):
        return np.array([c.radius for c in self.candidates], dtype=np.float64)


@lru_cache(maxsize=512)
def midpoint_circle(radius):
    """Integer (drow, dcol) offsets of the midpoint-rasterized circle, sorted."""
    radius = int(radius)
    if radius == 0:
        return np.zeros((1, 2), dtype=np.intp)
    pts = []
    x, y = radius, 0
    err = 1 - radius
    while x >= y:
        pts.extend(
            [(x, y), (y, x), (-y, x), (-x, y), (-x, -y), (-y, -x), (y, -x), (x, -y)]
        )
        y += 1
        if err < 0:
            err += 2 * y + 1
        else:
            x -= 1
            err += 2 * (y - x) + 1
    offs = np.unique(np.array(pts, dtype=np.intp), axis=0)
    offs.setflags(write=False)
    return offs


def radius_range_from_mm(diameter_range_mm, scale):
    """Pixel radius range for a diameter range in mm at ``scale`` mm/px."""
    lo, hi = diameter_range_mm
    return int(round(lo / 2.0 / scale)), int(round(hi / 2.0 / scale))


def _mask_ridge_correlation(mask, s_centered, s_norm):
    n = mask.size
    k = int(mask.sum())
    if k == 0 or k == n or s_norm == 0:
        return 0.0
    # Pearson(mask, S) with the mask mean k/n
    num = s_centered[mask].sum()
    den = np.sqrt(k * (1.0 - k / n)) * s_norm
    return float(num / den)


def select_gradient_threshold(grad: GradientField, ridge: RidgeMap, grid_size=20):
    """Gradient threshold whose binary mask correlates best with the ridge map.

    Candidates are ``grid_size`` evenly spaced quantiles (50% to 99%) of the
    nonzero gradient magnitudes.  Ties go to the largest threshold.
    """
    if grid_size < 2:
        raise ValueError(f"grid_size must be >= 2, got {grid_size}")
    mag = grad.magnitude
    s = ridge.values
    if mag.shape != s.shape:
        raise ValueError("gradient and ridge maps differ in shape")
    nonzero = mag[mag > 0]
    if nonzero.size == 0:
        raise EmptyDetectionError("gradient field is identically zero")
    levels = np.linspace(0.5, 0.99, grid_size)
    thresholds = np.quantile(nonzero, levels)
    s_centered = s - s.mean()
    s_norm = float(np.sqrt(np.sum(s_centered**2)))
    corrs = np.array([_mask_ridge_correlation(mag > t, s_centered, s_norm) for t in thresholds])
    best = len(corrs) - 1 - int(np.argmax(corrs[::-1]))
    return float(thresholds[best])


def build_accumulator(grad: GradientField, mask, ridge: RidgeMap, radius_range):
    """Sign-free gradient voting weighted by the ridge value at the source pixel."""
    d_min, d_max = check_radius_range(radius_range)
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    acc = np.zeros(h * w, dtype=np.float64)
    rows, cols = np.nonzero(mask & (grad.magnitude > 0))
    if rows.size == 0:
        return acc.reshape(h, w)
    ds = np.arange(d_min, d_max + 1, dtype=np.float64)
    for start in range(0, rows.size, _VOTE_CHUNK):
        r = rows[start : start + _VOTE_CHUNK]
        c = cols[start : start + _VOTE_CHUNK]
        m = grad.magnitude[r, c]
        du = (grad.iu[r, c] / m)[:, None] * ds
        dv = (grad.iv[r, c] / m)[:, None] * ds
        wt = np.broadcast_to(ridge.values[r, c][:, None], du.shape)
        for vr, vc in ((r[:, None] + du, c[:, None] + dv), (r[:, None] - du, c[:, None] - dv)):
            vr = np.rint(vr).astype(np.intp)
            vc = np.rint(vc).astype(np.intp)
            keep = (vr >= 0) & (vr < h) & (vc >= 0) & (vc < w)
            # consecutive distances can round to the same pixel; count it once
            keep[:, 1:] &= (vr[:, 1:] != vr[:, :-1]) | (vc[:, 1:] != vc[:, :-1])
            acc += np.bincount(vr[keep] * w + vc[keep], weights=wt[keep], minlength=h * w)
    return acc.reshape(h, w)


def smooth_accumulator(acc, sigma=2.0):
    if sigma <= 0:
        return np.asarray(acc, dtype=np.float64)
    return ndimage.gaussian_filter(np.asarray(acc, dtype=np.float64), sigma, mode="nearest")


def find_peaks(smoothed, frac, min_distance=0):
    """Strict 3x3 local maxima at or above ``frac * max``, strongest first.

    Maxima closer than ``min_distance`` to an already accepted, stronger
    maximum are dropped.  Returns a list of (row, col, response).
    """
    frac = check_fraction(frac, "frac")
    peak = smoothed.max() if smoothed.size else 0.0
    if peak <= 0:
        return []
    footprint = np.ones((3, 3), dtype=bool)
    footprint[1, 1] = False
    neigh = ndimage.maximum_filter(smoothed, footprint=footprint, mode="constant", cval=-np.inf)
    cand = (smoothed > neigh) & (smoothed >= frac * peak)
    rows, cols = np.nonzero(cand)
    vals = smoothed[rows, cols]
    order = np.lexsort((cols, rows, -vals))
    kept = []
    kept_xy = np.empty((0, 2))
    for i in order:
        p = np.array([rows[i], cols[i]], dtype=np.float64)
        if min_distance > 0 and kept_xy.size:
            if np.min(np.sum((kept_xy - p) ** 2, axis=1)) < min_distance**2:
                continue
        kept.append((int(rows[i]), int(cols[i]), float(vals[i])))
        kept_xy = np.vstack([kept_xy, p])
    return kept


def detect_peaks(acc, frac, sigma=2.0, min_distance=0):
    """Smooth the accumulator and return its peaks as (row, col, response)."""
    return find_peaks(smooth_accumulator(acc, sigma), frac, min_distance)


def signature_curve(center, grad: GradientField, radius_range):
    """Mean radially aligned gradient magnitude on circles of each radius.

    Returns (radii, values); values are NaN where the circle misses the image.
    """
    d_min, d_max = check_radius_range(radius_range, minimum=1)
    h, w = grad.magnitude.shape
    r0, c0 = center
    radii = np.arange(d_min, d_max + 1)
    values = np.full(radii.size, np.nan)
    for k, d in enumerate(radii):
        offs = midpoint_circle(int(d))
        pr = r0 + offs[:, 0]
        pc = c0 + offs[:, 1]
        inside = (pr >= 0) & (pr < h) & (pc >= 0) & (pc < w)
        if not inside.any():
            continue
        offs = offs[inside]
        unit = offs / np.hypot(offs[:, 0], offs[:, 1])[:, None]
        pr, pc = pr[inside], pc[inside]
        resp = np.abs(grad.iu[pr, pc] * unit[:, 0] + grad.iv[pr, pc] * unit[:, 1])
        values[k] = resp.mean()
    return radii, values


def estimate_radius(center, grad: GradientField, radius_range):
    """Radius maximizing the signature curve (smaller radius on ties).

    Returns None when the circle misses the image for every radius or the
    signature is identically zero.
    """
    radii, values = signature_curve(center, grad, radius_range)
    if np.all(np.isnan(values)):
        return None
    vals = np.where(np.isnan(values), -np.inf, values)
    best = int(np.argmax(vals))
    if vals[best] <= 0:
        return None
    return int(radii[best])


def circle_score(ridge: RidgeMap, circle: Circle):
    """Mean ridge value over the in-image pixels of the rasterized circle."""
    s = ridge.values
    h, w = s.shape
    offs = midpoint_circle(int(circle.radius))
    pr = circle.row + offs[:, 0]
    pc = circle.col + offs[:, 1]
    inside = (pr >= 0) & (pr < h) & (pc >= 0) & (pc < w)
    if not inside.any():
        return -np.inf
    return float(s[pr[inside], pc[inside]].mean())


@lru_cache(maxsize=8)
def _search_order(shift, scale):
    """All (drow, dcol, dradius) in the box, sorted by norm then lexicographically."""
    rng_s = np.arange(-shift, shift + 1)
    rng_d = np.arange(-scale, scale + 1)
    grid = np.array(np.meshgrid(rng_s, rng_s, rng_d, indexing="ij")).reshape(3, -1).T
    norm2 = np.sum(grid**2, axis=1)
    order = np.lexsort((grid[:, 2], grid[:, 1], grid[:, 0], norm2))
    return grid[order]


def refine_circle(circle: Circle, ridge: RidgeMap, shift=5, scale=5, radius_range=None):
    """Exhaustive local search over center shift and radius change.

    Each configuration is scored with :func:`circle_score`; the best score
    wins, ties going to the smallest displacement and then to the
    lexicographically smallest (drow, dcol, dradius).
    """
    s = ridge.values
    h, w = s.shape
    if radius_range is None:
        radius_range = (1, circle.radius + scale)
    d_min, d_max = radius_range
    dr = np.arange(-shift, shift + 1)
    rows = circle.row + dr
    cols = circle.col + dr
    scores = {}
    for delta_d in range(-scale, scale + 1):
        rad = circle.radius + delta_d
        if rad < d_min or rad > d_max or rad < 1:
            continue
        offs = midpoint_circle(rad)
        pr = rows[:, None, None] + offs[None, None, :, 0]
        pc = cols[None, :, None] + offs[None, None, :, 1]
        inside = (pr >= 0) & (pr < h) & (pc >= 0) & (pc < w)
        vals = np.where(inside, s[np.clip(pr, 0, h - 1), np.clip(pc, 0, w - 1)], 0.0)
        count = inside.sum(axis=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = vals.sum(axis=2) / count
        center_ok = ((rows >= 0) & (rows < h))[:, None] & ((cols >= 0) & (cols < w))[None, :]
        mean = np.where(center_ok & (count > 0), mean, -np.inf)
        scores[delta_d] = mean
    if not scores:
        return circle
    order = _search_order(shift, scale)
    best_val = -np.inf
    best = None
    for a, b, c in order:
        grid = scores.get(int(c))
        if grid is None:
            continue
        v = grid[a + shift, b + shift]
        if v > best_val:
            best_val = v
            best = (a, b, c)
    if best is None or not np.isfinite(best_val):
        return circle
    return Circle(int(circle.row + best[0]), int(circle.col + best[1]), int(circle.radius + best[2]))


class CircleDetector(BaseEstimator):
    """Coarse-to-fine circle detector (gradient voting + local refinement).

    Parameters
    ----------
    radius_range_px : tuple of int or None
        Allowed radii in pixels.  When None it is derived from
        ``diameter_range_mm`` and ``scale``.
    diameter_range_mm : tuple of float
        Allowed berry diameters in millimetres.
    scale : float or None
        Millimetres per pixel.
    ref_peak_frac, cand_peak_frac : float
        Peak thresholds relative to the accumulator maximum for the
        reference and candidate sets.
    refine_shift, refine_scale : int
        Half-widths of the local search box for center and radius.
    smoothing_sigma : float
        Gaussian sigma applied to the accumulator before peak finding.
    threshold_grid_size : int
        Number of gradient thresholds tried.
    ridge_window : int
        Window side of the standard-deviation ridge filter.

    Attributes
    ----------
    candidates_ : CandidateSet
    accumulator_ : ndarray
    gradient_threshold_ : float or None
    """

    def __init__(
        self,
        radius_range_px=None,
        diameter_range_mm=(5.0, 20.0),
        scale=None,
        ref_peak_frac=0.6,
        cand_peak_frac=0.3,
        refine_shift=5,
        refine_scale=5,
        smoothing_sigma=2.0,
        threshold_grid_size=20,
        ridge_window=5,
    ):
        self.radius_range_px = radius_range_px
        self.diameter_range_mm = diameter_range_mm
        self.scale = scale
        self.ref_peak_frac = ref_peak_frac
        self.cand_peak_frac = cand_peak_frac
        self.refine_shift = refine_shift
        self.refine_scale = refine_scale
        self.smoothing_sigma = smoothing_sigma
        self.threshold_grid_size = threshold_grid_size
        self.ridge_window = ridge_window

    def resolved_radius_range(self):
        if self.radius_range_px is not None:
            return check_radius_range(self.radius_range_px)
        if self.scale is None:
            raise ValueError("either radius_range_px or scale must be given")
        return check_radius_range(radius_range_from_mm(self.diameter_range_mm, self.scale))

    def _check_params(self):
        cand = check_fraction(self.cand_peak_frac, "cand_peak_frac")
        ref = check_fraction(self.ref_peak_frac, "ref_peak_frac")
        if cand > ref:
            raise ValueError("cand_peak_frac must not exceed ref_peak_frac")
        lo, hi = self.diameter_range_mm
        if not 0 < lo <= hi:
            raise ValueError(f"invalid diameter range {self.diameter_range_mm!r}")
        check_odd_window(self.ridge_window)
        return self.resolved_radius_range()

    def fit(self, X, y=None):
        """Detect circles in image ``X``; results land in ``candidates_``."""
        radius_range = self._check_params()
        gray = to_gray(check_image(X))
        h, w = gray.shape
        self.gradient_threshold_ = None
        self.accumulator_ = np.zeros((h, w))
        self.candidates_ = CandidateSet()
        if min(h, w) < 3:
            return self
        grad = sobel_gradients(gray)
        ridge = stddev_ridge(gray, self.ridge_window)
        self.gradient_ = grad
        self.ridge_ = ridge
        try:
            t_g = select_gradient_threshold(grad, ridge, self.threshold_grid_size)
        except EmptyDetectionError:
            return self
        self.gradient_threshold_ = t_g
        acc = build_accumulator(grad, grad.magnitude > t_g, ridge, radius_range)
        self.accumulator_ = acc
        smoothed = smooth_accumulator(acc, self.smoothing_sigma)
        peak = smoothed.max()
        if peak <= 0:
            return self
        peaks = find_peaks(smoothed, self.cand_peak_frac, min_distance=radius_range[0])
        seen = set()
        for row, col, resp in peaks:
            rad = estimate_radius((row, col), grad, radius_range)
            if rad is None:
                continue
            circ = refine_circle(
                Circle(row, col, rad), ridge, self.refine_shift, self.refine_scale, radius_range
            )
            # two peaks can refine onto the same circle; keep the stronger one
            if circ in seen:
                continue
            seen.add(circ)
            self.candidates_.candidates.append(circ)
            self.candidates_.reference_flags.append(bool(resp >= self.ref_peak_frac * peak))
            self.candidates_.responses.append(resp)
        return self

    def detect(self, X):
        return self.fit(X).candidates_


def detect_circles(img, **params):
    """Functional shortcut for ``CircleDetector(**params).detect(img)``."""
    return CircleDetector(**params).detect(img)
