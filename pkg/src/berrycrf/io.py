"""Reading and writing 8-bit PNG and binary PPM/PGM rasters."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import EmptyImageError, ImageFormatError, ImageReadError

SUPPORTED_FORMATS = {"PNG", "PPM"}  # Pillow reports P5 and P6 files as "PPM"


def load_image(path):
    """Load an 8-bit PNG/PPM/PGM as floats in [0, 1].

    Returns an (H, W, 3) array for color input and (H, W) for grayscale.
    """
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise ImageReadError(f"cannot read {path}: {exc}") from exc
    with fh:
        try:
            im = Image.open(fh)
            im.load()
        except UnidentifiedImageError as exc:
            raise ImageFormatError(f"{path}: not a recognized image") from exc
        except (OSError, SyntaxError, ValueError) as exc:
            raise ImageFormatError(f"{path}: malformed image data ({exc})") from exc
        if im.format not in SUPPORTED_FORMATS:
            raise ImageFormatError(f"{path}: unsupported format {im.format}")
        if im.width == 0 or im.height == 0:
            raise EmptyImageError(f"{path}: zero-area image")
        if im.mode in ("L", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        elif im.mode in ("RGB", "RGBA", "P", "LA"):
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
        else:
            raise ImageFormatError(f"{path}: unsupported pixel mode {im.mode} (8-bit only)")
    return arr / 255.0


def to_uint8(img):
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, img):
    Image.fromarray(to_uint8(img)).save(os.fspath(path), format="PNG")


def save_pnm(path, img):
    """Write P5 (grayscale) or P6 (color) depending on the array shape."""
    Image.fromarray(to_uint8(img)).save(os.fspath(path), format="PPM")


def save_heatmap_pgm(path, values):
    """Dump a non-negative array as a max-normalized PGM."""
    values = np.asarray(values, dtype=np.float64)
    peak = values.max() if values.size else 0.0
    scaled = values / peak if peak > 0 else np.zeros_like(values)
    save_pnm(path, scaled)


def load_patch_dir(path):
    """Load every PNG in ``path`` (sorted by name) as an RGB array."""
    path = Path(path)
    if not path.is_dir():
        raise ImageReadError(f"reference patch directory not found: {path}")
    patches = []
    for f in sorted(path.glob("*.png")):
        img = load_image(f)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        patches.append(img)
    return patches
