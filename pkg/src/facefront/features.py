"""Histogram-of-oriented-gradient descriptors sampled around landmarks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class FeatureConfig:
    patch_size: int = 32
    cells: int = 4
    bins: int = 9

    def __post_init__(self):
        if self.patch_size < 2 or self.cells < 1 or self.bins < 1:
            raise ValueError("patch_size >= 2, cells >= 1 and bins >= 1 required")
        if self.patch_size % self.cells:
            raise ValueError("patch_size must be divisible by cells")

    @property
    def per_landmark(self):
        return self.cells * self.cells * self.bins

    def dim(self, n_landmarks):
        return n_landmarks * self.per_landmark


def _sample_clamped(data, x, y):
    h, w = data.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2) if w > 1 else np.zeros(x.shape, np.int64)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2) if h > 1 else np.zeros(y.shape, np.int64)
    fx, fy = x - x0, y - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = data[y0, x0] * (1 - fx) + data[y0, x1] * fx
    bottom = data[y1, x0] * (1 - fx) + data[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def orientation_histograms(patches, config):
    """Per-cell unsigned-orientation histograms for patches of shape (n, P+2, P+2).

    Gradients are central differences on the inner P x P samples; each
    gradient votes its magnitude into one of ``bins`` equal sectors of
    [0, pi). Returns an array of shape (n, cells, cells, bins).
    """
    p, c, b = config.patch_size, config.cells, config.bins
    gx = patches[:, 1:-1, 2:] - patches[:, 1:-1, :-2]
    gy = patches[:, 2:, 1:-1] - patches[:, :-2, 1:-1]
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    idx = np.minimum((ang * (b / np.pi)).astype(np.int64), b - 1)
    n = patches.shape[0]
    cell = np.arange(p) // (p // c)
    flat = (
        np.arange(n)[:, None, None] * (c * c * b)
        + cell[None, :, None] * (c * b)
        + cell[None, None, :] * b
        + idx
    )
    hist = np.bincount(flat.ravel(), weights=mag.ravel(), minlength=n * c * c * b)
    return hist.reshape(n, c, c, b)


def extract_features(image, shape, config=FeatureConfig()):
    """Concatenated, per-landmark L2-normalised HoG descriptors.

    ``shape`` is the flat ``[x1, y1, ..., xN, yN]`` vector. Patches are
    bilinearly sampled around each landmark and clamped at the image
    border. A landmark whose patch has no gradient gets an all-zero block.
    """
    shape = np.asarray(shape, dtype=np.float64).ravel()
    if shape.size % 2:
        raise DimensionError("shape vector must have even length")
    pts = shape.reshape(-1, 2)
    data = image.data if hasattr(image, "data") else np.asarray(image, dtype=np.float64)
    offsets = np.arange(config.patch_size + 2) - (config.patch_size + 1) / 2.0
    xs = pts[:, 0, None, None] + offsets[None, None, :]
    ys = pts[:, 1, None, None] + offsets[None, :, None]
    xs, ys = np.broadcast_arrays(xs, ys)
    patches = _sample_clamped(data, xs, ys)
    hist = orientation_histograms(patches, config).reshape(len(pts), -1)
    norm = np.linalg.norm(hist, axis=1, keepdims=True)
    hist = np.divide(hist, norm, out=np.zeros_like(hist), where=norm > 1e-12)
    return hist.ravel()
