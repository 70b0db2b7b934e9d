"""PNG reading and writing for grayscale intensity and 16-bit depth images."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from .errors import DataError
from .geometry import Image

# depth PNG encoding: 0 = no depth, otherwise depth_px = (value - 1) / DEPTH_SCALE
DEPTH_SCALE = 256.0


def read_gray(path):
    try:
        with PILImage.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("L"), dtype=np.float64)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"{path}: unreadable image ({exc})") from exc
    return Image(arr)


def to_uint8(image, background=0):
    data = np.where(image.mask, image.data, background)
    return np.clip(np.rint(data), 0, 255).astype(np.uint8)


def write_gray(path, image, background=0):
    PILImage.fromarray(to_uint8(image, background), mode="L").save(path, format="PNG")


def write_depth(path, depth):
    vals = np.where(depth.mask, np.rint(depth.data * DEPTH_SCALE) + 1, 0)
    if np.any(vals < 0) or np.any(vals > 65535):
        raise ValueError("depth out of the encodable range [0, 255.99] px")
    PILImage.fromarray(vals.astype(np.uint16)).save(path, format="PNG")


def read_depth(path):
    try:
        with PILImage.open(path) as im:
            im.load()
            vals = np.asarray(im, dtype=np.int64)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"{path}: unreadable depth image ({exc})") from exc
    if vals.ndim != 2:
        raise DataError(f"{path}: depth image must be single channel")
    mask = vals > 0
    return Image(np.where(mask, (vals - 1) / DEPTH_SCALE, 0.0), mask)


def image_files(directory):
    exts = {".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".tif", ".tiff"}
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in exts and p.is_file())
