"""Cascade model containers and 68-point landmark files.

Binary layout (all little-endian)::

    b"CMR1"                      magic
    uint32 version               currently 1
    uint32 n_landmarks, dim, n_stages
    uint32 patch_size, cells, bins
    float64[2N] mean_shape       unit-box frame
    per stage:
        uint32 C
        float64[C]               mixing weights
        float64[C*dim]           means
        float64[C*dim]           variances
        float64[C*(dim+1)*2N]    regressors, (C, dim+1, 2N) row-major
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .cascade import CascadeModel, MixtureStage
from .errors import DataError
from .features import FeatureConfig
from .gmm import GaussianMixture

MAGIC = b"CMR1"
VERSION = 1
_F8 = np.dtype("<f8")


def model_to_bytes(model):
    n = model.n_landmarks
    d = model.features.dim(n)
    f = model.features
    parts = [MAGIC, struct.pack("<7I", VERSION, n, d, len(model.stages), f.patch_size, f.cells, f.bins)]
    parts.append(model.mean_shape.astype(_F8).tobytes())
    for s in model.stages:
        g = s.gmm
        parts.append(struct.pack("<I", g.n_components))
        for a in (g.weights, g.means, g.variances, s.regressors):
            parts.append(np.ascontiguousarray(a, dtype=_F8).tobytes())
    return b"".join(parts)


def model_from_bytes(buf):
    if buf[:4] != MAGIC:
        raise DataError("not a CMR1 model file (bad magic)")
    try:
        version, n, d, t, patch, cells, bins = struct.unpack_from("<7I", buf, 4)
    except struct.error as exc:
        raise DataError("truncated CMR1 header") from exc
    if version != VERSION:
        raise DataError(f"unsupported CMR1 version {version}")
    pos = 4 + 28

    def take(count):
        nonlocal pos
        end = pos + 8 * count
        if end > len(buf):
            raise DataError("truncated CMR1 payload")
        a = np.frombuffer(buf, dtype=_F8, count=count, offset=pos).astype(np.float64)
        pos = end
        return a

    features = FeatureConfig(patch, cells, bins)
    if features.dim(n) != d:
        raise DataError("feature dimension in header disagrees with the feature config")
    mean = take(2 * n)
    stages = []
    for _ in range(t):
        if pos + 4 > len(buf):
            raise DataError("truncated CMR1 payload")
        (c,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        w = take(c)
        mu = take(c * d).reshape(c, d)
        var = take(c * d).reshape(c, d)
        regs = take(c * (d + 1) * 2 * n).reshape(c, d + 1, 2 * n)
        stages.append(MixtureStage(GaussianMixture(w, mu, var), regs))
    if pos != len(buf):
        raise DataError("trailing bytes after CMR1 payload")
    return CascadeModel(tuple(stages), mean, features)


def save_model(model, path):
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())


def model_to_json(model):
    """Lossless text export; floats are written with shortest round-trip repr."""
    f = model.features
    doc = {
        "format": "CMR1-json",
        "version": VERSION,
        "n_landmarks": model.n_landmarks,
        "features": {"patch_size": f.patch_size, "cells": f.cells, "bins": f.bins},
        "mean_shape": model.mean_shape.tolist(),
        "stages": [
            {
                "weights": s.gmm.weights.tolist(),
                "means": s.gmm.means.tolist(),
                "variances": s.gmm.variances.tolist(),
                "regressors": s.regressors.tolist(),
            }
            for s in model.stages
        ],
    }
    return json.dumps(doc)


def model_from_json(text):
    doc = json.loads(text)
    if doc.get("format") != "CMR1-json":
        raise DataError("not a CMR1 JSON export")
    stages = tuple(
        MixtureStage(GaussianMixture(s["weights"], s["means"], s["variances"]), np.array(s["regressors"]))
        for s in doc["stages"]
    )
    return CascadeModel(stages, np.array(doc["mean_shape"]), FeatureConfig(**doc["features"]))


def model_summary(model):
    return {
        "n_landmarks": model.n_landmarks,
        "feature_dim": model.features.dim(model.n_landmarks),
        "features": {"patch_size": model.features.patch_size, "cells": model.features.cells,
                     "bins": model.features.bins},
        "stages": [
            {"components": s.gmm.n_components, "weights": [round(float(w), 6) for w in s.gmm.weights],
             "regressor_norm": float(np.linalg.norm(s.regressors))}
            for s in model.stages
        ],
    }


# ---------------------------------------------------------------------------
# landmark files


def write_landmarks(path, shape):
    """Write a 300-W style ``.pts`` file."""
    pts = np.asarray(shape, dtype=np.float64).reshape(-1, 2)
    lines = ["version: 1", f"n_points: {len(pts)}", "{"]
    lines += [f"{x!r} {y!r}" for x, y in pts.tolist()]
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_landmarks(path):
    """Read a ``.pts`` file, or a bare file whose first line is the point count.

    Returns the flat ``[x1, y1, ...]`` vector.
    """
    try:
        lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: unreadable landmark file ({exc})") from exc
    count = None
    coords = []
    for ln in lines:
        low = ln.lower()
        if low.startswith("version"):
            continue
        if low.startswith("n_points"):
            count = int(ln.split(":", 1)[1])
            continue
        if ln in ("{", "}"):
            continue
        fields = ln.split()
        if count is None and len(fields) == 1 and not coords:
            count = int(fields[0])
            continue
        if len(fields) != 2:
            raise DataError(f"{path}: malformed landmark line {ln!r}")
        try:
            coords.append((float(fields[0]), float(fields[1])))
        except ValueError as exc:
            raise DataError(f"{path}: malformed landmark line {ln!r}") from exc
    if count is None:
        raise DataError(f"{path}: missing point-count header")
    if len(coords) != count:
        raise DataError(f"{path}: header announces {count} points, found {len(coords)}")
    arr = np.array(coords, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: non-finite landmark coordinate")
    return arr
