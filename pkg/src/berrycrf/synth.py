"""Synthetic vineyard-like scenes with exact ground truth, and detection scoring."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage


class PackingError(RuntimeError):
    """The requested disks could not be placed within the retry budget."""


@dataclass
class SceneSpec:
    height: int = 1667
    width: int = 2500
    scale: float = 0.2  # mm per px
    n_disks: int = 30
    n_clusters: int = 3
    diameter_mm: tuple = (6.0, 18.0)
    # per-scene mean diameter drawn from diameter_mm, berries spread around it
    # with this coefficient of variation; None draws every disk uniformly
    diameter_cv: float | None = 0.1
    berry_color: tuple = (0.62, 0.74, 0.32)
    color_jitter: float = 0.04
    low_contrast_fraction: float = 0.0
    background_color: tuple = (0.16, 0.27, 0.11)
    texture: float = 0.25
    illumination: float = 0.3
    occlusion: float = 0.0
    n_distractors: int = 8
    # round non-berry blobs (sky through the canopy, dark holes)
    n_round_distractors: int = 0
    round_distractor_color: tuple = (0.78, 0.84, 0.93)
    noise: float = 0.01
    gap_px: float = 3.0
    seed: int = 0


@dataclass
class TrueCircle:
    row: float
    col: float
    radius: float
    cluster: int
    low_contrast: bool = False


@dataclass
class GroundTruth:
    circles: list = field(default_factory=list)
    scale: float = 0.2

    def to_json(self):
        return json.dumps(
            {"scale_mm_per_px": self.scale, "circles": [asdict(c) for c in self.circles]},
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls([TrueCircle(**c) for c in data["circles"]], data.get("scale_mm_per_px", 0.2))

    def overlapped_fraction(self):
        """Fraction of circles intersecting at least one other circle."""
        n = len(self.circles)
        if n < 2:
            return 0.0
        xy = np.array([(c.row, c.col) for c in self.circles])
        r = np.array([c.radius for c in self.circles])
        dist = np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1))
        hit = dist < (r[:, None] + r[None, :])
        np.fill_diagonal(hit, False)
        return float(hit.any(axis=1).mean())


def _place_disks(spec: SceneSpec, rng):
    r_lo = spec.diameter_mm[0] / 2.0 / spec.scale
    r_hi = spec.diameter_mm[1] / 2.0 / spec.scale
    margin = r_hi + 2
    n_clusters = max(1, spec.n_clusters)
    sizes = np.full(n_clusters, spec.n_disks // n_clusters)
    sizes[: spec.n_disks % n_clusters] += 1
    # clusters sit on a jittered grid so they do not merge into one blob
    gcols = int(np.ceil(np.sqrt(n_clusters * spec.width / spec.height)))
    grows = int(np.ceil(n_clusters / gcols))
    cells = rng.permutation(grows * gcols)[:n_clusters]
    r_mean = rng.uniform(r_lo, r_hi) if spec.diameter_cv is not None else 0.5 * (r_lo + r_hi)

    def draw():
        if spec.diameter_cv is None:
            return rng.uniform(r_lo, r_hi)
        return float(np.clip(rng.normal(r_mean, spec.diameter_cv * r_mean), r_lo, r_hi))

    placed = []
    overlapped = 0
    for k, size in enumerate(sizes):
        gr, gc = divmod(int(cells[k]), gcols)
        cell_h, cell_w = spec.height / grows, spec.width / gcols
        cr = (gr + 0.5 + rng.uniform(-0.15, 0.15)) * cell_h
        cc = (gc + 0.5 + rng.uniform(-0.15, 0.15)) * cell_w
        spread = 0.9 * r_mean * np.sqrt(size)
        for _ in range(size):
            want_overlap = (overlapped + 2) <= spec.occlusion * spec.n_disks + 1e-9
            for _attempt in range(2000):
                rad = draw()
                if want_overlap and placed:
                    # partially occluded: tuck the new disk against an existing one
                    host = placed[rng.integers(len(placed))]
                    ang = rng.uniform(0, 2 * np.pi)
                    d = (host.radius + rad) * rng.uniform(0.72, 0.9)
                    row, col = host.row + d * np.sin(ang), host.col + d * np.cos(ang)
                else:
                    row = cr + rng.normal(0, spread)
                    col = cc + rng.normal(0, spread)
                if not (margin <= row <= spec.height - margin and margin <= col <= spec.width - margin):
                    continue
                ok = True
                n_touch = 0
                for p in placed:
                    dist = np.hypot(p.row - row, p.col - col)
                    if dist < p.radius + rad + spec.gap_px:
                        if want_overlap and p is host and dist > 0.7 * (p.radius + rad):
                            n_touch += 1
                            continue
                        ok = False
                        break
                if ok and (not want_overlap or not placed or n_touch == 1):
                    if want_overlap and placed:
                        overlapped += 1 if _is_overlapped(host, placed) else 2
                    placed.append(TrueCircle(float(row), float(col), float(rad), k))
                    break
            else:
                raise PackingError(f"could not place disk {len(placed) + 1} of {spec.n_disks}")
    return placed


def _is_overlapped(c, others):
    for o in others:
        if o is c:
            continue
        if np.hypot(o.row - c.row, o.col - c.col) < o.radius + c.radius:
            return True
    return False


def _smooth_noise(shape, rng, cell=24):
    h, w = shape
    small = rng.normal(size=(h // cell + 2, w // cell + 2))
    big = ndimage.zoom(small, cell, order=1)[:h, :w]
    return big / (np.abs(big).max() + 1e-12)


def _paint(img, alpha, color, r0, c0):
    h, w = alpha.shape[:2]
    sub = img[r0 : r0 + h, c0 : c0 + w]
    sub *= 1.0 - alpha[..., None]
    sub += alpha[..., None] * color


def _render_disk(img, circ: TrueCircle, color):
    H, W = img.shape[:2]
    R = circ.radius
    r0 = max(int(np.floor(circ.row - R - 2)), 0)
    r1 = min(int(np.ceil(circ.row + R + 2)) + 1, H)
    c0 = max(int(np.floor(circ.col - R - 2)), 0)
    c1 = min(int(np.ceil(circ.col + R + 2)) + 1, W)
    yy, xx = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    dy, dx = yy - circ.row, xx - circ.col
    rho = np.hypot(dy, dx)
    alpha = np.clip(R + 0.5 - rho, 0.0, 1.0)
    shade = 0.8 + 0.2 * (1.0 - np.clip(rho / R, 0, 1) ** 2)
    hl = 0.22 * np.exp(-((dy + 0.35 * R) ** 2 + (dx + 0.35 * R) ** 2) / (2 * (0.22 * R) ** 2))
    col = np.asarray(color)[None, None, :] * shade[..., None] + hl[..., None]
    sub = img[r0:r1, c0:c1]
    sub *= 1.0 - alpha[..., None]
    sub += alpha[..., None] * col


def _render_distractor(img, rng, spec: SceneSpec):
    """Elongated blob or bar: strong edges but not circular."""
    H, W = img.shape[:2]
    r_mid = (spec.diameter_mm[0] + spec.diameter_mm[1]) / 4.0 / spec.scale
    a = rng.uniform(1.5, 4.0) * r_mid
    b = a / rng.uniform(3.0, 7.0)
    th = rng.uniform(0, np.pi)
    row, col = rng.uniform(0, H), rng.uniform(0, W)
    ext = int(a + 3)
    r0, r1 = max(int(row) - ext, 0), min(int(row) + ext + 1, H)
    c0, c1 = max(int(col) - ext, 0), min(int(col) + ext + 1, W)
    if r1 <= r0 or c1 <= c0:
        return
    yy, xx = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    u = (yy - row) * np.cos(th) + (xx - col) * np.sin(th)
    v = -(yy - row) * np.sin(th) + (xx - col) * np.cos(th)
    q = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    alpha = np.clip((1.0 - q) * b + 0.5, 0.0, 1.0)
    tone = rng.choice([0.0, 1.0])
    color = np.array([0.42, 0.3, 0.18]) if tone == 0 else np.array([0.5, 0.62, 0.35])
    _paint(img, alpha, color * rng.uniform(0.8, 1.1), r0, c0)


def _place_round_distractors(spec: SceneSpec, rng, berries):
    """Flat disks in the berry size range, kept clear of every berry."""
    r_lo = spec.diameter_mm[0] / 2.0 / spec.scale
    r_hi = spec.diameter_mm[1] / 2.0 / spec.scale
    out = []
    for _ in range(spec.n_round_distractors):
        for _attempt in range(500):
            rad = rng.uniform(r_lo, r_hi)
            row = rng.uniform(rad + 2, spec.height - rad - 2)
            col = rng.uniform(rad + 2, spec.width - rad - 2)
            if all(
                np.hypot(o.row - row, o.col - col) > o.radius + rad + 4 * spec.gap_px
                for o in berries + out
            ):
                out.append(TrueCircle(float(row), float(col), float(rad), -1))
                break
    return out


def _render_flat_disk(img, circ: TrueCircle, color):
    H, W = img.shape[:2]
    R = circ.radius
    r0, r1 = max(int(circ.row - R - 2), 0), min(int(circ.row + R + 3), H)
    c0, c1 = max(int(circ.col - R - 2), 0), min(int(circ.col + R + 3), W)
    yy, xx = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    alpha = np.clip(R + 0.5 - np.hypot(yy - circ.row, xx - circ.col), 0.0, 1.0)
    _paint(img, alpha, np.asarray(color, dtype=np.float64), r0, c0)


def render_scene(spec: SceneSpec):
    """Render ``spec`` and return (image, GroundTruth); deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    circles = _place_disks(spec, rng)
    H, W = spec.height, spec.width
    base = np.asarray(spec.background_color, dtype=np.float64)
    tex = 1.0 + spec.texture * _smooth_noise((H, W), rng, cell=24)
    tex += 0.5 * spec.texture * _smooth_noise((H, W), rng, cell=6)
    img = base[None, None, :] * tex[..., None]
    for _ in range(spec.n_distractors):
        _render_distractor(img, rng, spec)
    for blob in _place_round_distractors(spec, rng, circles):
        tone = np.asarray(spec.round_distractor_color) + rng.normal(0, spec.color_jitter, 3)
        _render_flat_disk(img, blob, np.clip(tone, 0, 1))
    n_low = int(round(spec.low_contrast_fraction * len(circles)))
    low_idx = set(rng.permutation(len(circles))[:n_low].tolist())
    for i, circ in enumerate(circles):
        color = np.asarray(spec.berry_color) + rng.normal(0, spec.color_jitter, 3)
        if i in low_idx:
            circ.low_contrast = True
            color = base + 0.35 * (color - base)
        _render_disk(img, circ, np.clip(color, 0, 1))
    if spec.illumination:
        ramp = np.linspace(1 - spec.illumination / 2, 1 + spec.illumination / 2, W)
        img *= ramp[None, :, None]
    if spec.noise:
        img += rng.normal(0, spec.noise, img.shape)
    return np.clip(img, 0.0, 1.0), GroundTruth(circles, spec.scale)


@dataclass
class DetectionScore:
    precision: float
    recall: float
    diameter_mae_px: float
    matched: int
    n_detected: int
    n_truth: int
    precision_by_convention: bool = False


def evaluate_detection(detected, truth, tol=3.0):
    """Greedy one-to-one matching of detections to true circles.

    ``detected`` is a sequence of objects with ``row``, ``col`` and
    ``radius``; pairs qualify when both the center distance and the radius
    difference are within ``tol`` pixels.  Closest pairs are matched first.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    gt = truth.circles if isinstance(truth, GroundTruth) else list(truth)
    det = list(detected)
    pairs = []
    for i, d in enumerate(det):
        for j, t in enumerate(gt):
            dist = float(np.hypot(d.row - t.row, d.col - t.col))
            if dist <= tol and abs(d.radius - t.radius) <= tol:
                pairs.append((dist, i, j))
    pairs.sort()
    used_d, used_t, errs = set(), set(), []
    for dist, i, j in pairs:
        if i in used_d or j in used_t:
            continue
        used_d.add(i)
        used_t.add(j)
        errs.append(abs(2 * det[i].radius - 2 * gt[j].radius))
    m = len(errs)
    empty = len(det) == 0
    return DetectionScore(
        precision=1.0 if empty else m / len(det),
        recall=m / len(gt) if gt else 1.0,
        diameter_mae_px=float(np.mean(errs)) if errs else float("nan"),
        matched=m,
        n_detected=len(det),
        n_truth=len(gt),
        precision_by_convention=empty,
    )
