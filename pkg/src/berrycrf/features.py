"""Patch descriptors (color, HoG, gist) and their median-correlation projection."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_image
from .exceptions import ReferenceUnavailableError
from .imaging import resize_bilinear, sobel_gradients, to_gray

FEATURE_KINDS = ("rgb", "hog", "gist")
_EPS = 1e-12


def extract_patch(img, circle, n_p=32):
    """Square crop of side ``2 * radius`` around the circle, resized to ``n_p``.

    Pixels outside the image are filled by replicating the border.
    """
    if n_p < 8:
        raise ValueError(f"n_p must be >= 8, got {n_p}")
    img = check_image(img)
    h, w = img.shape[:2]
    d = max(int(round(circle.radius)), 1)
    rows = np.clip(np.arange(circle.row - d, circle.row + d), 0, h - 1)
    cols = np.clip(np.arange(circle.col - d, circle.col + d), 0, w - 1)
    crop = img[np.ix_(rows, cols)]
    if crop.ndim == 2:
        crop = np.repeat(crop[:, :, None], 3, axis=2)
    return resize_bilinear(crop, n_p, n_p)


def rgb_descriptor(patch):
    """Row-major, channel-interleaved pixel vector (no normalization)."""
    return np.asarray(patch, dtype=np.float64).reshape(-1)


def _unit(v):
    norm = np.linalg.norm(v)
    if norm < _EPS:
        return np.zeros_like(v)
    return v / norm


def hog_descriptor(patch, cells=2, bins=8):
    """Unsigned-orientation gradient histograms on a ``cells`` x ``cells`` grid.

    Orientation is measured from the row axis, so a gradient pointing along
    the rows falls in bin 0.  Each pixel splits its magnitude linearly between
    the two nearest bin centers (which sit at multiples of pi / bins, with
    wrap-around).  The concatenated histogram is L2-normalized; an all-zero
    histogram stays zero.
    """
    gray = to_gray(patch)
    g = sobel_gradients(gray)
    theta = np.mod(np.arctan2(g.iv, g.iu), np.pi)
    pos = theta / (np.pi / bins)
    lo = np.floor(pos).astype(np.intp)
    frac = pos - lo
    lo %= bins
    hi = (lo + 1) % bins
    feats = []
    for rs in np.array_split(np.arange(gray.shape[0]), cells):
        for cs in np.array_split(np.arange(gray.shape[1]), cells):
            m = g.magnitude[np.ix_(rs, cs)].ravel()
            f = frac[np.ix_(rs, cs)].ravel()
            hist = np.bincount(lo[np.ix_(rs, cs)].ravel(), m * (1 - f), minlength=bins)
            hist += np.bincount(hi[np.ix_(rs, cs)].ravel(), m * f, minlength=bins)
            feats.append(hist)
    return _unit(np.concatenate(feats))


@lru_cache(maxsize=16)
def gist_filter_bank(n, scales=4, orientations=8):
    """Frequency-domain band-pass filters, shape (scales, orientations, n, n).

    Scale ``k`` is a log-Gaussian ring centered at 0.25 / 2**k cycles/px
    (half an octave wide); orientation ``j`` is a Gaussian wedge centered at
    ``j * pi / orientations`` from the row axis.  The DC term is zero.
    """
    fu = np.fft.fftfreq(n)[:, None]
    fv = np.fft.fftfreq(n)[None, :]
    f = np.hypot(fu, fv)
    ang = np.arctan2(fv, fu)
    with np.errstate(divide="ignore"):
        logf = np.log2(f)
    bank = np.zeros((scales, orientations, n, n))
    sigma_theta = 0.6 * np.pi / orientations
    for k in range(scales):
        center = 0.25 / 2**k
        radial = np.where(f > 0, np.exp(-((logf - np.log2(center)) ** 2) / (2 * 0.5**2)), 0.0)
        for j in range(orientations):
            delta = np.mod(ang - j * np.pi / orientations + np.pi / 2, np.pi) - np.pi / 2
            bank[k, j] = radial * np.exp(-(delta**2) / (2 * sigma_theta**2))
    bank.setflags(write=False)
    return bank


def gist_descriptor(patch, grid=4, scales=4, orientations=8):
    """Mean band-pass energy per (scale, orientation, grid cell), L2-normalized.

    Layout is scale-major: index = ((scale * orientations + orientation) *
    grid + cell_row) * grid + cell_col.
    """
    gray = to_gray(patch)
    n = gray.shape[0]
    if gray.shape[0] != gray.shape[1] or n < 16:
        raise ValueError(f"gist needs a square patch of side >= 16, got {gray.shape}")
    bank = gist_filter_bank(n, scales, orientations)
    spec = np.fft.fft2(gray)
    resp = np.fft.ifft2(spec[None, None] * bank).real
    energy = resp**2
    split = np.array_split(np.arange(n), grid)
    out = np.empty((scales, orientations, grid, grid))
    for a, rs in enumerate(split):
        for b, cs in enumerate(split):
            out[:, :, a, b] = energy[:, :, rs[0] : rs[-1] + 1, cs[0] : cs[-1] + 1].mean(axis=(2, 3))
    return _unit(out.reshape(-1))


@dataclass
class FeatureBundle:
    """Descriptor matrices, one row per patch."""

    rgb: np.ndarray
    hog: np.ndarray
    gist: np.ndarray

    def __len__(self):
        return self.rgb.shape[0]

    def __getitem__(self, kind):
        if kind not in FEATURE_KINDS:
            raise KeyError(kind)
        return getattr(self, kind)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return FeatureBundle(self.rgb[idx], self.hog[idx], self.gist[idx])


class PatchDescriptor(BaseEstimator, TransformerMixin):
    """Turn a list of RGB patches into a :class:`FeatureBundle`."""

    def __init__(self, hog_cells=2, hog_bins=8, gist_grid=4, gist_scales=4, gist_orientations=8):
        self.hog_cells = hog_cells
        self.hog_bins = hog_bins
        self.gist_grid = gist_grid
        self.gist_scales = gist_scales
        self.gist_orientations = gist_orientations

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        patches = list(X)
        if not patches:
            raise ValueError("no patches to describe")
        shapes = {np.shape(p) for p in patches}
        if len(shapes) != 1:
            raise ValueError(f"patches must share one shape, got {sorted(shapes)}")
        rgb = np.stack([rgb_descriptor(p) for p in patches])
        hog = np.stack([hog_descriptor(p, self.hog_cells, self.hog_bins) for p in patches])
        gist = np.stack(
            [
                gist_descriptor(p, self.gist_grid, self.gist_scales, self.gist_orientations)
                for p in patches
            ]
        )
        return FeatureBundle(rgb, hog, gist)


def _standardize_rows(X):
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(Xc, axis=1, keepdims=True)
    ok = norm[:, 0] > _EPS * max(1.0, float(np.abs(X).max(initial=0.0)))
    Z = np.zeros_like(Xc)
    Z[ok] = Xc[ok] / norm[ok]
    return Z


def pearson_correlation(a, b):
    """Sample Pearson coefficient; 0 when either vector has zero variance."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("need at least 2 dimensions")
    za, zb = _standardize_rows(np.stack([a, b]))
    return float(np.clip(za @ zb, -1.0, 1.0))


def correlation_matrix(A, B):
    """Pearson coefficients between every row of ``A`` and every row of ``B``."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return np.clip(_standardize_rows(A) @ _standardize_rows(B).T, -1.0, 1.0)


class ReferenceCorrelation(BaseEstimator, TransformerMixin):
    """Project descriptors to their median correlation with the reference rows."""

    def fit(self, X, y=None):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 0:
            raise ReferenceUnavailableError("no reference descriptors")
        self.references_ = X
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 0:
            return np.zeros(0)
        return np.median(correlation_matrix(X, self.references_), axis=1)

    def pairwise_correlations(self):
        """Correlations between distinct references (each unordered pair once)."""
        C = correlation_matrix(self.references_, self.references_)
        iu = np.triu_indices(C.shape[0], k=1)
        return C[iu]


def transform_features(candidates: FeatureBundle, references: FeatureBundle):
    """Median reference correlation per candidate and kind, shape (n, 3)."""
    if len(references) == 0:
        raise ReferenceUnavailableError("empty reference set")
    cols = [
        ReferenceCorrelation().fit(references[k]).transform(candidates[k]) for k in FEATURE_KINDS
    ]
    return np.column_stack(cols) if len(candidates) else np.zeros((0, 3))


def extract_features(img, circles, n_p=32, descriptor=None):
    """Patches around ``circles`` and their descriptors."""
    patches = [extract_patch(img, c, n_p) for c in circles]
    descriptor = descriptor or PatchDescriptor()
    if not patches:
        d = descriptor
        return patches, FeatureBundle(
            np.zeros((0, 3 * n_p * n_p)),
            np.zeros((0, d.hog_cells**2 * d.hog_bins)),
            np.zeros((0, d.gist_grid**2 * d.gist_scales * d.gist_orientations)),
        )
    return patches, descriptor.transform(patches)
