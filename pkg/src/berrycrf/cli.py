"""Command line interface: ``berrycrf analyze|batch|synth|eval|dump-config``.

Exit codes: 0 analyzed (zero berries included), 2 bad input,
3 classification unavailable.  Failures print one JSON object to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from .exceptions import BerryError, ReferenceUnavailableError
from .io import load_image, load_patch_dir, save_png
from .pipeline import BerryPipeline, write_outputs
from .sizing import batch_correlation, batch_differences
from .synth import GroundTruth, PackingError, SceneSpec, evaluate_detection, render_scene

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_NO_CLASSIFICATION = 3


class UsageError(ValueError):
    pass


def _pair(kind):
    def parse(text):
        try:
            a, b = (kind(v) for v in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}") from None
        return (a, b)

    return parse


def _common(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--scale-px", type=float, help="width of the 13 mm label in pixels (b)")
    g.add_argument("--radius-px", type=_pair(int), metavar="MIN,MAX", help="explicit radius range in px")
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--pairwise", choices=["potts", "literal"])
    p.add_argument("--ref-patches", type=Path, help="directory of reference berry patches (PNG)")
    p.add_argument("--manual", type=Path, help="CSV with a mean_diameter_mm column (optional image column)")
    p.add_argument("--debug", action="store_true", help="also write accumulator.pgm and energy.txt")


def build_parser():
    parser = argparse.ArgumentParser(prog="berrycrf", description="Grape berry detection and sizing.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="analyze one image")
    p.add_argument("image", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _common(p)

    p = sub.add_parser("batch", help="analyze several images")
    p.add_argument("images", type=Path, nargs="+")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=1)
    _common(p)

    p = sub.add_parser("synth", help="render a synthetic scene with ground truth")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-disks", type=int, default=30)
    p.add_argument("--n-clusters", type=int, default=3)
    p.add_argument("--size", type=_pair(int), metavar="H,W", default=(1667, 2500))
    p.add_argument("--scale", type=float, default=0.2, help="mm per px")
    p.add_argument("--occlusion", type=float, default=0.0)
    p.add_argument("--distractors", type=int, default=8)
    p.add_argument("--round-distractors", type=int, default=0)

    p = sub.add_parser("eval", help="run the pipeline on a synthetic image and score it")
    p.add_argument("image", type=Path)
    p.add_argument("truth", type=Path)
    p.add_argument("--tol", type=float, default=3.0)
    p.add_argument("--out", type=Path)
    _common(p)

    p = sub.add_parser("dump-config", help="print the resolved configuration")
    _common(p)
    return parser


def resolve_params(args):
    params = cfgmod.default_config()
    if getattr(args, "config", None):
        params.update(cfgmod.load(args.config))
    if getattr(args, "scale_px", None) is not None:
        params["scale_px"], params["radius_range_px"] = args.scale_px, None
    if getattr(args, "radius_px", None) is not None:
        params["radius_range_px"], params["scale_px"] = args.radius_px, None
    if getattr(args, "seed", None) is not None:
        params["seed"] = args.seed
    if getattr(args, "pairwise", None):
        params["pairwise"] = args.pairwise
    return params


def read_manual(path):
    """Rows of the manual CSV as (image or None, mean_diameter_mm)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "mean_diameter_mm" not in reader.fieldnames:
            raise UsageError(f"{path}: missing mean_diameter_mm column")
        rows = []
        for row in reader:
            try:
                rows.append((row.get("image") or None, float(row["mean_diameter_mm"])))
            except ValueError:
                raise UsageError(f"{path}: bad mean_diameter_mm {row['mean_diameter_mm']!r}") from None
    return rows


def match_manual(rows, images):
    """Manual mean per image: by name (or stem) when given, else by order."""
    if not rows:
        return [None] * len(images)
    if all(name is None for name, _ in rows):
        return [rows[i][1] if i < len(rows) else None for i in range(len(images))]
    table = {}
    for name, val in rows:
        if name is not None:
            table[name] = val
            table[Path(name).stem] = val
    return [table.get(p.name, table.get(p.stem)) for p in images]


def _run_one(image, out_dir, params, ref_dir, manual, debug):
    """Analyze one image; returns (exit_code, report_or_error)."""
    try:
        img = load_image(image)
        patches = load_patch_dir(ref_dir) if ref_dir else None
        result = BerryPipeline(**params).analyze(img, reference_patches=patches)
        report = write_outputs(result, out_dir, image.name, manual, debug)
        return EXIT_OK, report
    except ReferenceUnavailableError as exc:
        return EXIT_NO_CLASSIFICATION, _error(exc, image)
    except (BerryError, OSError, ValueError) as exc:
        return EXIT_BAD_INPUT, _error(exc, image)


def _error(exc, image=None):
    code = EXIT_NO_CLASSIFICATION if isinstance(exc, ReferenceUnavailableError) else EXIT_BAD_INPUT
    return {"error": type(exc).__name__, "message": str(exc), "image": str(image) if image else None, "exit_code": code}


def _emit_error(payload):
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def cmd_analyze(args, params):
    manual = None
    if args.manual:
        manual = match_manual(read_manual(args.manual), [args.image])[0]
    code, payload = _run_one(args.image, args.out, params, args.ref_patches, manual, args.debug)
    if code:
        _emit_error(payload)
    else:
        print(json.dumps(payload["stats"], sort_keys=True))
    return code


def _run_star(job):
    return _run_one(*job)


def cmd_batch(args, params):
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    names = [p.stem for p in args.images]
    if len(set(names)) != len(names):
        raise UsageError("image file names must be unique within a batch")
    manual = [None] * len(args.images)
    if args.manual:
        manual = match_manual(read_manual(args.manual), args.images)
    jobs = [
        (img, args.out / img.stem, params, args.ref_patches, m, args.debug)
        for img, m in zip(args.images, manual)
    ]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as ex:
            outcomes = list(ex.map(_run_star, jobs))
    else:
        outcomes = [_run_star(j) for j in jobs]
    images, pairs, mds = [], [], []
    worst = EXIT_OK
    for img, m, (code, payload) in zip(args.images, manual, outcomes):
        if code:
            _emit_error(payload)
            worst = max(worst, code)
            images.append({"image": img.name, "exit_code": code, "error": payload})
            continue
        stats = payload["stats"]
        images.append({"image": img.name, "exit_code": code, "stats": stats})
        if m is not None and stats["mean_diameter_mm"] is not None:
            pairs.append((stats["mean_diameter_mm"], m))
            mds.append(stats["md_mm"])
    batch = {"images": images, "n_images": len(images)}
    if args.manual:
        batch["n_compared"] = len(pairs)
        batch["rho_res"] = batch_correlation(pairs) if len(pairs) >= 2 else None
        batch["md_mm"], batch["mad_mm"] = batch_differences(mds)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "batch.json").write_text(json.dumps(batch, indent=2, sort_keys=True) + "\n")
    return worst


def cmd_synth(args):
    h, w = args.size
    spec = SceneSpec(
        height=h,
        width=w,
        scale=args.scale,
        n_disks=args.n_disks,
        n_clusters=args.n_clusters,
        occlusion=args.occlusion,
        n_distractors=args.distractors,
        n_round_distractors=args.round_distractors,
        seed=args.seed,
    )
    img, gt = render_scene(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    save_png(args.out / "scene.png", img)
    (args.out / "truth.json").write_text(gt.to_json() + "\n")
    print(json.dumps({"image": str(args.out / "scene.png"), "n_disks": len(gt.circles), "scale_px": 13.0 / args.scale}))
    return EXIT_OK


def cmd_eval(args, params):
    gt = GroundTruth.from_json(args.truth.read_text())
    if params["scale_px"] is None and params["radius_range_px"] is None:
        params["scale_px"] = params["label_width_mm"] / gt.scale
    # score in the coordinates of the truth file
    params["resize_to"] = None
    img = load_image(args.image)
    patches = load_patch_dir(args.ref_patches) if args.ref_patches else None
    result = BerryPipeline(**params).analyze(img, reference_patches=patches)
    cand = evaluate_detection(result.candidates.candidates, gt, args.tol)
    berry = evaluate_detection(result.berries, gt, args.tol)
    true_mean = 2.0 * gt.scale * sum(c.radius for c in gt.circles) / max(len(gt.circles), 1)
    mean = result.summary.mean
    out = {
        "candidates": _finite(asdict(cand)),
        "berries": _finite(asdict(berry)),
        "true_mean_diameter_mm": true_mean,
        "mean_diameter_mm": mean,
        "mean_error_mm": None if mean is None else mean - true_mean,
        "fallback_engaged": result.fallback_engaged,
    }
    if args.out:
        write_outputs(result, args.out, args.image.name, None, args.debug)
        (args.out / "eval.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def _finite(d):
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        params = resolve_params(args)
        if args.command == "dump-config":
            sys.stdout.write(cfgmod.dumps(params))
            return EXIT_OK
        if args.command in ("analyze", "batch") and params["scale_px"] is None and params["radius_range_px"] is None:
            raise UsageError("give --scale-px or --radius-px (or set one in --config)")
        handler = {"analyze": cmd_analyze, "batch": cmd_batch, "eval": cmd_eval}[args.command]
        return handler(args, params)
    except ReferenceUnavailableError as exc:
        _emit_error(_error(exc))
        return EXIT_NO_CLASSIFICATION
    except (BerryError, OSError, ValueError, PackingError) as exc:
        _emit_error(_error(exc))
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
