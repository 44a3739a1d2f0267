"""End-to-end berry sizing: enhance, detect, describe, classify, measure."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from sklearn.base import BaseEstimator

from ._validation import check_image
from .crf import BERRY, OneClassCRF
from .detection import CandidateSet, Circle, CircleDetector
from .exceptions import ReferenceUnavailableError
from .features import PatchDescriptor, extract_features, extract_patch
from .imaging import enhance, resize_bilinear
from .io import save_heatmap_pgm, save_png, to_uint8
from .sizing import build_histogram, calibrate_scale, measure_berries, summarize

BERRY_COLOR = (230, 30, 30)
NONBERRY_COLOR = (40, 80, 235)


@dataclass
class AnalysisResult:
    candidates: CandidateSet
    labels: np.ndarray
    scale_mm_per_px: float | None
    diameters_mm: np.ndarray | None
    histogram: dict
    summary: object
    config: dict
    image_shape: tuple
    resized_from: tuple | None = None
    p_used: float | None = None
    fallback_engaged: bool = False
    crf: object = None
    accumulator: np.ndarray | None = None
    image: np.ndarray | None = field(default=None, repr=False)

    @property
    def berry_indices(self):
        return [int(i) for i in np.flatnonzero(self.labels == BERRY)]

    @property
    def berries(self):
        return [self.candidates.candidates[i] for i in self.berry_indices]


class BerryPipeline(BaseEstimator):
    """Berry detection and sizing for one image at a time.

    The constructor parameters are the complete run configuration;
    ``get_params()`` is what gets serialized and echoed into reports.
    ``scale_px`` is the pixel width of the 13 mm label in the input image.
    """

    def __init__(
        self,
        scale_px=None,
        label_width_mm=13.0,
        radius_range_px=None,
        diameter_range_mm=(5.0, 20.0),
        resize_to=(1667, 2500),
        enhance=True,
        ridge_window=5,
        smoothing_sigma=2.0,
        threshold_grid_size=20,
        ref_peak_frac=0.6,
        cand_peak_frac=0.3,
        refine_shift=5,
        refine_scale=5,
        n_p=32,
        hog_cells=2,
        hog_bins=8,
        gist_grid=4,
        gist_scales=4,
        gist_orientations=8,
        w_rgb=0.5,
        w_hog=0.5,
        w_gist=1.0,
        w_dist=2.0,
        w_spatial=None,
        p=0.5,
        p_fallback=0.7,
        sharpness=2.0,
        sharpness_unit="spread",
        dist_sharpness=10.0,
        pairwise="potts",
        prune_factor=3.0,
        seed=0,
    ):
        self.scale_px = scale_px
        self.label_width_mm = label_width_mm
        self.radius_range_px = radius_range_px
        self.diameter_range_mm = diameter_range_mm
        self.resize_to = resize_to
        self.enhance = enhance
        self.ridge_window = ridge_window
        self.smoothing_sigma = smoothing_sigma
        self.threshold_grid_size = threshold_grid_size
        self.ref_peak_frac = ref_peak_frac
        self.cand_peak_frac = cand_peak_frac
        self.refine_shift = refine_shift
        self.refine_scale = refine_scale
        self.n_p = n_p
        self.hog_cells = hog_cells
        self.hog_bins = hog_bins
        self.gist_grid = gist_grid
        self.gist_scales = gist_scales
        self.gist_orientations = gist_orientations
        self.w_rgb = w_rgb
        self.w_hog = w_hog
        self.w_gist = w_gist
        self.w_dist = w_dist
        self.w_spatial = w_spatial
        self.p = p
        self.p_fallback = p_fallback
        self.sharpness = sharpness
        self.sharpness_unit = sharpness_unit
        self.dist_sharpness = dist_sharpness
        self.pairwise = pairwise
        self.prune_factor = prune_factor
        self.seed = seed

    def resolved_config(self):
        cfg = self.get_params()
        if cfg["w_spatial"] is None:
            cfg["w_spatial"] = 0.5 * (self.w_rgb + self.w_hog + self.w_gist + self.w_dist)
        return cfg

    def _prepare(self, img):
        img = _as_rgb(check_image(img, min_size=3))
        h, w = img.shape[:2]
        factor = 1.0
        resized_from = None
        if self.resize_to is not None:
            th, tw = self.resize_to
            if (h > w) != (th > tw):
                th, tw = tw, th
            if (h, w) != (th, tw):
                fh, fw = h / th, w / tw
                if abs(fh - fw) > 0.01 * max(fh, fw):
                    warnings.warn("resizing changes the aspect ratio; circles become ellipses", stacklevel=3)
                factor = 0.5 * (fh + fw)
                img = resize_bilinear(img, tw, th)
                resized_from = (h, w)
        if self.enhance:
            img = enhance(img)
        return img, factor, resized_from

    def _detector(self, scale):
        return CircleDetector(
            radius_range_px=self.radius_range_px,
            diameter_range_mm=self.diameter_range_mm,
            scale=scale,
            ref_peak_frac=self.ref_peak_frac,
            cand_peak_frac=self.cand_peak_frac,
            refine_shift=self.refine_shift,
            refine_scale=self.refine_scale,
            smoothing_sigma=self.smoothing_sigma,
            threshold_grid_size=self.threshold_grid_size,
            ridge_window=self.ridge_window,
        )

    def _classifier(self):
        return OneClassCRF(
            w_rgb=self.w_rgb,
            w_hog=self.w_hog,
            w_gist=self.w_gist,
            w_dist=self.w_dist,
            w_spatial=self.w_spatial,
            p=self.p,
            p_fallback=self.p_fallback,
            sharpness=self.sharpness,
            sharpness_unit=self.sharpness_unit,
            dist_sharpness=self.dist_sharpness,
            pairwise=self.pairwise,
            prune_factor=self.prune_factor,
        )

    def _descriptor(self):
        return PatchDescriptor(
            self.hog_cells, self.hog_bins, self.gist_grid, self.gist_scales, self.gist_orientations
        )

    def analyze(self, img, reference_patches=None):
        """Run all five steps on ``img``.

        ``reference_patches`` (a list of RGB arrays) replaces the detected
        reference circles as one-class training data.

        Raises ReferenceUnavailableError when there are candidates but fewer
        than two references and no external patches.
        """
        work, factor, resized_from = self._prepare(img)
        scale = None
        if self.scale_px is not None:
            scale = calibrate_scale(self.scale_px, self.label_width_mm).ratio * factor
        elif self.radius_range_px is None:
            raise ValueError("either scale_px or radius_range_px must be set")
        detector = self._detector(scale).fit(work)
        cands = detector.candidates_
        cfg = self.resolved_config()
        n = len(cands)
        labels = np.zeros(n, dtype=np.intp)
        p_used, fallback, crf_result = None, False, None
        if n:
            _, feats = extract_features(work, cands.candidates, self.n_p, self._descriptor())
            diam_px = 2.0 * cands.radii()
            clf = self._classifier()
            if reference_patches:
                # external patches get the same enhancement as the image
                prep = [_as_rgb(p) for p in reference_patches]
                prep = [enhance(p) for p in prep] if self.enhance else prep
                patches = [extract_patch(p, _full_patch_circle(p), self.n_p) for p in prep]
                clf.fit(self._descriptor().transform(patches))
            else:
                ref_idx = cands.reference_indices
                if len(ref_idx) < 2:
                    raise ReferenceUnavailableError(
                        f"only {len(ref_idx)} reference circle(s) detected and no reference patches given"
                    )
                clf.fit(feats.subset(ref_idx), diameters=diam_px[ref_idx])
            labels = clf.predict(feats, cands.centers(), diameters=diam_px)
            crf_result = clf.result_
            p_used, fallback = crf_result.p_used, crf_result.fallback_engaged
        cfg["p_used"] = p_used
        cfg["fallback_engaged"] = fallback
        berries = [c for c, y in zip(cands.candidates, labels) if y == BERRY]
        diam = hist = None
        if scale is not None:
            cal = calibrate_scale(self.label_width_mm / scale, self.label_width_mm)
            diam = measure_berries(berries, cal)
            hist = build_histogram(diam)
        summary = summarize(diam if diam is not None else [])
        return AnalysisResult(
            candidates=cands,
            labels=labels,
            scale_mm_per_px=scale,
            diameters_mm=diam,
            histogram=hist or {},
            summary=summary,
            config=cfg,
            image_shape=work.shape[:2],
            resized_from=resized_from,
            p_used=p_used,
            fallback_engaged=fallback,
            crf=crf_result,
            accumulator=detector.accumulator_,
            image=work,
        )


def _as_rgb(img):
    img = check_image(img)
    return np.repeat(img[:, :, None], 3, axis=2) if img.ndim == 2 else img


def _full_patch_circle(patch):
    h, w = patch.shape[:2]
    return Circle(h // 2, w // 2, max(min(h, w) // 2, 1))


def _fmt(x):
    return None if x is None else float(format(float(x), ".10g"))


def report_dict(result: AnalysisResult, image_name=None, manual_mean=None):
    summary = summarize(result.diameters_mm if result.diameters_mm is not None else [], manual_mean)
    cands = result.candidates
    return {
        "image": image_name,
        "image_shape": list(result.image_shape),
        "resized_from": list(result.resized_from) if result.resized_from else None,
        "scale_mm_per_px": _fmt(result.scale_mm_per_px),
        "n_candidates": len(cands),
        "n_references": int(sum(cands.reference_flags)),
        "n_berries": len(result.berry_indices),
        "p_used": result.p_used,
        "fallback_engaged": result.fallback_engaged,
        "stats": {
            "n": summary.n,
            "mean_diameter_mm": _fmt(summary.mean),
            "std_diameter_mm": _fmt(summary.std),
            "std_degenerate": summary.std_degenerate,
            "sizing_available": summary.sizing_available,
            "manual_mean_diameter_mm": _fmt(manual_mean),
            "md_mm": _fmt(summary.md),
            "mad_mm": _fmt(summary.mad),
        },
        "histogram": [{"bin_mm": k, "count": v} for k, v in sorted(result.histogram.items())],
        "config": _jsonable(result.config),
    }


def _jsonable(cfg):
    out = {}
    for k, v in cfg.items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def draw_overlay(result: AnalysisResult, width=2):
    """RGB uint8 overlay: berries red, rejected candidates blue."""
    canvas = Image.fromarray(to_uint8(result.image))
    draw = ImageDraw.Draw(canvas)
    for c, y in zip(result.candidates.candidates, result.labels):
        color = BERRY_COLOR if y == BERRY else NONBERRY_COLOR
        box = (c.col - c.radius, c.row - c.radius, c.col + c.radius, c.row + c.radius)
        draw.ellipse(box, outline=color, width=width)
    return np.asarray(canvas)


def write_outputs(result: AnalysisResult, out_dir, image_name=None, manual_mean=None, debug=False):
    """Write report.json, diameters.csv, histogram.csv and overlay.png."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = report_dict(result, image_name, manual_mean)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(out / "diameters.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["candidate_id", "center_row", "center_col", "radius_px", "diameter_mm", "label"])
        a = result.scale_mm_per_px
        for i, (c, y) in enumerate(zip(result.candidates.candidates, result.labels)):
            dmm = "" if a is None else format(2.0 * c.radius * a, ".6f")
            wr.writerow([i, c.row, c.col, c.radius, dmm, "berry" if y == BERRY else "non-berry"])
    with open(out / "histogram.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["bin_mm", "count"])
        for k, v in sorted(result.histogram.items()):
            wr.writerow([format(k, ".1f"), v])
    save_png(out / "overlay.png", draw_overlay(result) / 255.0)
    if debug:
        if result.accumulator is not None:
            save_heatmap_pgm(out / "accumulator.pgm", result.accumulator)
        if result.crf is not None:
            (out / "energy.txt").write_text(result.crf.energy.dump())
    return report
