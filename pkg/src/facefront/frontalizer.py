"""Frontalization with a generic depth template and soft symmetry.

Pipeline: crop the face, warp the template depth onto the input landmark
mesh, align the resulting 3-D landmarks to the template with a similarity
transform, push every pixel through that transform, splat the texture on
the template's frontal grid, flag sparse regions as occluded, mirror them
from the other half, and finally warp onto a fixed mean shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError, DimensionError, StageError
from .geometry import (
    Image,
    TriangleMesh,
    apply_transform,
    bilinear_sample,
    horn_align,
    mesh_coverage,
    piecewise_affine_warp,
)
from .template import NOSE_BRIDGE

LANDMARK_DEGENERATE = "landmark-degenerate"
FIT_FAILED = "fit-failed"
TRANSFORM_DEGENERATE = "transform-degenerate"
EMPTY_CLOUD = "empty-cloud"
STAGES = (LANDMARK_DEGENERATE, FIT_FAILED, TRANSFORM_DEGENERATE, EMPTY_CLOUD)

SCALE_RANGE = (0.2, 5.0)


@dataclass(frozen=True)
class FrontalizerConfig:
    margin: float = 0.15
    density_threshold: float = 0.5
    resolution: int = 224
    fill_neighbours: int = 4
    rescale_depth: bool = True

    def __post_init__(self):
        if not 0 <= self.margin <= 1:
            raise ValueError("margin must lie in [0, 1]")
        if not 0 < self.density_threshold <= 1:
            raise ValueError("density_threshold must lie in (0, 1]")
        if self.resolution < 16:
            raise ValueError("resolution must be at least 16")
        if self.fill_neighbours < 1:
            raise ValueError("fill_neighbours must be positive")


@dataclass(frozen=True, eq=False)
class AlignedModel:
    depth: Image
    landmarks3d: np.ndarray


@dataclass(frozen=True, eq=False)
class FrontalizedCloud:
    points: np.ndarray
    rows: np.ndarray
    cols: np.ndarray


@dataclass(frozen=True, eq=False)
class DensityMask:
    density: np.ndarray
    counts: np.ndarray
    hull: np.ndarray
    flags: np.ndarray
    threshold: float


@dataclass(frozen=True, eq=False)
class MeanShape:
    points: np.ndarray
    mesh: TriangleMesh
    shape: tuple
    midline: float

    @property
    def flat(self):
        return self.points.ravel()


@dataclass(frozen=True, eq=False)
class FrontalizationOutput:
    texture: Image
    density: DensityMask
    side: str
    corrected: dict
    final: dict
    transform: object
    frontal_landmarks: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _as_points(shape, dims=2):
    p = np.asarray(shape, dtype=np.float64)
    if p.size % dims:
        raise DimensionError(f"shape length {p.size} is not divisible by {dims}")
    return p.reshape(-1, dims)


def crop_face(image, landmarks, margin=0.15):
    """Crop to the landmark bounding box grown by ``margin`` of its extent.

    Returns ``(crop, landmarks_in_crop, (x0, y0))``.
    """
    p = _as_points(landmarks)
    h, w = image.shape
    if not np.all(np.isfinite(p)):
        raise ValueError("landmarks must be finite")
    if np.any(p < 0) or np.any(p[:, 0] > w - 1) or np.any(p[:, 1] > h - 1):
        raise ValueError("landmarks fall outside the image")
    lo, hi = p.min(axis=0), p.max(axis=0)
    ext = hi - lo
    x0, y0 = np.maximum(np.floor(lo - margin * ext), 0).astype(int)
    x1 = min(int(math.ceil(hi[0] + margin * ext[0])), w - 1)
    y1 = min(int(math.ceil(hi[1] + margin * ext[1])), h - 1)
    if x1 <= x0 or y1 <= y0:
        raise ValueError("face crop collapses to zero area")
    crop = Image(image.data[y0:y1 + 1, x0:x1 + 1], image.mask[y0:y1 + 1, x0:x1 + 1])
    return crop, (p - [x0, y0]).ravel(), (x0, y0)


def fit_depth_model(template, cropped, landmarks):
    """Warp the template depth onto the input landmark mesh, on the crop grid."""
    p = _as_points(landmarks)
    if len(p) != template.n_landmarks:
        raise DimensionError(f"expected {template.n_landmarks} landmarks, got {len(p)}")
    dst = template.mesh.with_vertices(p)
    bad = dst.degenerate(reference=template.mesh)
    if len(bad):
        raise StageError(FIT_FAILED, f"landmark mesh folds or collapses in triangles {bad.tolist()}")
    depth = piecewise_affine_warp(template.mesh, dst, template.depth, out_shape=cropped.shape)
    # each landmark is a mesh vertex, so its warped depth is the template depth at the matching vertex
    z, ok = bilinear_sample(template.depth, template.landmarks[:, 0], template.landmarks[:, 1])
    z = np.where(ok, z, template.landmarks[:, 2])
    return AlignedModel(depth, np.c_[p, z])


def estimate_frontal_transform(s_a, s_r):
    """Similarity transform carrying the aligned landmarks onto the template's."""
    a, r = _as_points(s_a, 3), _as_points(s_r, 3)
    if a.shape != r.shape:
        raise DimensionError("landmark sets differ in size")
    try:
        t = horn_align(a, r)
    except DegenerateGeometryError as exc:
        raise StageError(TRANSFORM_DEGENERATE, str(exc)) from exc
    if not SCALE_RANGE[0] <= t.scale <= SCALE_RANGE[1]:
        raise StageError(TRANSFORM_DEGENERATE, f"implausible scale {t.scale:.4g}")
    return t


def frontalize_cloud(aligned, t):
    rows, cols = np.nonzero(aligned.depth.mask)
    pts = np.c_[cols.astype(float), rows.astype(float), aligned.depth.data[rows, cols]]
    return FrontalizedCloud(apply_transform(t, pts), rows, cols)


def _idw_fill(values, known, targets, k):
    """Inverse-distance weighted values at ``targets`` (M, 2) from pixels in ``known``."""
    ky, kx = np.nonzero(known)
    if len(ky) == 0 or len(targets) == 0:
        return np.zeros(len(targets))
    k = min(k, len(ky))
    tree = cKDTree(np.c_[kx, ky])
    dist, idx = tree.query(targets, k=k)
    dist, idx = dist.reshape(len(targets), k), idx.reshape(len(targets), k)
    w = 1.0 / np.maximum(dist, 1e-12)
    return np.sum(w * values[ky[idx], kx[idx]], axis=1) / w.sum(axis=1)


def map_texture(cloud, cropped, out_shape, hull, threshold=0.5, neighbours=4):
    """Splat source intensities onto the frontal grid and measure point density.

    Collisions are averaged. Density is the 3x3 mean of the per-pixel point
    counts taken over hull pixels only; hull pixels whose density is below
    ``threshold`` times the hull median are flagged as occluded. Empty hull
    pixels are filled by inverse-distance weighting of the nearest filled
    pixels.
    """
    h, w = out_shape
    hull = np.asarray(hull, bool)
    if hull.shape != (h, w):
        raise DimensionError("hull mask does not match the output grid")
    src_ok = cropped.mask[cloud.rows, cloud.cols]
    xy = np.rint(cloud.points[src_ok, :2]).astype(np.int64)
    vals = cropped.data[cloud.rows[src_ok], cloud.cols[src_ok]]
    inside = (xy[:, 0] >= 0) & (xy[:, 0] < w) & (xy[:, 1] >= 0) & (xy[:, 1] < h)
    if not inside.any():
        raise StageError(EMPTY_CLOUD, "no frontalized point lands on the output grid")
    flat = xy[inside, 1] * w + xy[inside, 0]
    counts = np.bincount(flat, minlength=h * w).reshape(h, w)
    sums = np.bincount(flat, weights=vals[inside], minlength=h * w).reshape(h, w)
    filled = counts > 0
    tex = np.where(filled, sums / np.maximum(counts, 1), 0.0)

    box = np.ones((3, 3))
    num = ndimage.convolve(np.where(hull, counts, 0).astype(float), box, mode="constant")
    den = ndimage.convolve(hull.astype(float), box, mode="constant")
    density = np.where(hull, num / np.maximum(den, 1), 0.0)
    median = float(np.median(density[hull])) if hull.any() else 0.0
    flags = hull & (density < threshold * median)

    holes = hull & ~filled
    ty, tx = np.nonzero(holes)
    tex[ty, tx] = _idw_fill(tex, filled, np.c_[tx, ty], neighbours)
    texture = Image(tex, filled | hull)
    return texture, DensityMask(density, counts, hull, flags, threshold * median)


def choose_mirror_side(landmarks, quality):
    """Half of the face (split at the landmark-centroid x) with the better mean quality.

    Ties go to the left.
    """
    p = _as_points(landmarks)
    q = np.asarray(quality, dtype=np.float64).ravel()
    if len(q) != len(p):
        raise DimensionError("need one quality score per landmark")
    cx = p[:, 0].mean()
    left, right = q[p[:, 0] < cx], q[p[:, 0] > cx]
    ql = left.mean() if len(left) else -np.inf
    qr = right.mean() if len(right) else -np.inf
    return "right" if qr > ql else "left"


def _mirror_cols(width, midline):
    cols = np.arange(width)
    return cols, np.rint(2.0 * midline - cols).astype(np.int64)


def mirror_fill(texture, flags, side, mode, midline, neighbours=4):
    """Soft-symmetry correction about the vertical line x = ``midline``.

    ``asymmetric`` replaces only flagged pixels by their mirror image;
    ``symmetric`` copies the chosen half onto the other. Returns the new
    image and the number of flagged pixels whose mirror was itself flagged
    (those are interpolated instead).
    """
    flags = np.asarray(flags, bool)
    if flags.shape != texture.shape:
        raise DimensionError("flag mask does not match the texture")
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    h, w = texture.shape
    data, mask = texture.data.copy(), texture.mask.copy()
    cols, mirror = _mirror_cols(w, midline)
    if mode == "asymmetric":
        ys, xs = np.nonzero(flags)
        xm = mirror[xs]
        ok = (xm >= 0) & (xm < w)
        ok[ok] &= ~flags[ys[ok], xm[ok]] & texture.mask[ys[ok], xm[ok]]
        data[ys[ok], xs[ok]] = texture.data[ys[ok], xm[ok]]
        mask[ys[ok], xs[ok]] = True
        fy, fx = ys[~ok], xs[~ok]
        if len(fy):
            known = texture.mask & ~flags
            data[fy, fx] = _idw_fill(texture.data, known, np.c_[fx, fy], neighbours)
        return Image(data, mask), int(len(fy))
    if mode == "symmetric":
        target = (cols > midline) if side == "left" else (cols < midline)
        take = target & (mirror >= 0) & (mirror < w)
        data[:, cols[take]] = texture.data[:, mirror[take]]
        mask[:, cols[take]] = texture.mask[:, mirror[take]]
        return Image(data, mask), 0
    raise ValueError(f"mode must be 'asymmetric' or 'symmetric', got {mode!r}")


def default_mean_shape(template, resolution=224, fill=0.8):
    """Template landmarks scaled into a square grid with the nose bridge on the centre column."""
    xy = template.landmarks[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    k = fill * (resolution - 1) / float(np.max(hi - lo))
    mid = template.midline
    centre = (resolution - 1) / 2.0 if resolution % 2 else resolution / 2.0
    pts = (xy - [mid, (lo[1] + hi[1]) / 2.0]) * k + [resolution / 2.0, centre]
    mesh = template.mesh.with_vertices(pts)
    if template.n_landmarks == 68:
        midline = float(np.mean(pts[NOSE_BRIDGE, 0]))
    else:
        midline = resolution / 2.0
    return MeanShape(pts, mesh, (resolution, resolution), midline)


def map_to_mean_shape(image, landmarks, mean):
    """Warp ``image`` so its landmarks land on the mean shape; background is 0."""
    p = _as_points(landmarks)
    if len(p) != len(mean.points):
        raise DimensionError("landmark count differs from the mean shape")
    src = mean.mesh.with_vertices(p)
    bad = src.degenerate(reference=mean.mesh)
    if len(bad):
        raise DegenerateGeometryError(f"landmark mesh folds in triangles {bad.tolist()}")
    return piecewise_affine_warp(src, mean.mesh, image, out_shape=mean.shape)


def _check_landmarks(image, landmarks, n):
    p = np.asarray(landmarks, dtype=np.float64).ravel()
    if p.size != 2 * n:
        raise StageError(LANDMARK_DEGENERATE, f"expected {n} landmarks, got {p.size / 2:g}")
    if not np.all(np.isfinite(p)):
        raise StageError(LANDMARK_DEGENERATE, "non-finite landmark coordinate")
    pts = p.reshape(-1, 2)
    h, w = image.shape
    if np.any(pts < 0) or np.any(pts[:, 0] > w - 1) or np.any(pts[:, 1] > h - 1):
        raise StageError(LANDMARK_DEGENERATE, "landmarks fall outside the image")
    if np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-9 * max(1.0, np.abs(pts).max())) < 2:
        raise StageError(LANDMARK_DEGENERATE, "landmarks are collinear")
    return p


def frontalize(image, landmarks, template, config=FrontalizerConfig(), quality=None, mean=None,
               hull=None):
    """Run the full frontalization chain; failures raise a stage-tagged :class:`StageError`.

    ``quality`` scores pick the mirror side; without them every landmark
    counts equally. ``mean`` and ``hull`` default to values derived from
    the template and can be passed in to avoid recomputation in batches.
    """
    n = template.n_landmarks
    p = _check_landmarks(image, landmarks, n)
    try:
        crop, local, origin = crop_face(image, p, config.margin)
    except ValueError as exc:
        raise StageError(LANDMARK_DEGENERATE, str(exc)) from exc
    try:
        aligned = fit_depth_model(template, crop, local)
    except DegenerateGeometryError as exc:
        raise StageError(FIT_FAILED, str(exc)) from exc

    t = estimate_frontal_transform(aligned.landmarks3d, template.landmarks)
    depth_scale = 1.0
    if config.rescale_depth:
        # template depth is in template pixels; match it to the face's size
        for _ in range(4):
            depth_scale = 1.0 / t.scale
            s_a = aligned.landmarks3d * [1.0, 1.0, depth_scale]
            t = estimate_frontal_transform(s_a, template.landmarks)
        aligned = AlignedModel(
            Image(aligned.depth.data * depth_scale, aligned.depth.mask),
            aligned.landmarks3d * [1.0, 1.0, depth_scale],
        )

    cloud = frontalize_cloud(aligned, t)
    if len(cloud.points) == 0:
        raise StageError(EMPTY_CLOUD, "aligned model has no valid pixels")
    if hull is None:
        hull = mesh_coverage(template.mesh, template.shape) > 0
    texture, dmask = map_texture(cloud, crop, template.shape, hull, config.density_threshold,
                                 config.fill_neighbours)

    frontal = apply_transform(t, aligned.landmarks3d)[:, :2]
    side = choose_mirror_side(p, np.ones(n) if quality is None else quality)
    mid = template.midline
    corrected, fallbacks = {}, {}
    for mode in ("asymmetric", "symmetric"):
        corrected[mode], fallbacks[mode] = mirror_fill(texture, dmask.flags, side, mode, mid,
                                                       config.fill_neighbours)
    if mean is None:
        mean = default_mean_shape(template, config.resolution)
    final = {}
    try:
        for mode, img in corrected.items():
            final[mode] = map_to_mean_shape(img, frontal, mean)
    except DegenerateGeometryError as exc:
        raise StageError(TRANSFORM_DEGENERATE, f"frontalized landmarks fold: {exc}") from exc

    hd = dmask.density[dmask.hull]
    diagnostics = {
        "crop_origin": [int(origin[0]), int(origin[1])],
        "crop_shape": [int(crop.shape[0]), int(crop.shape[1])],
        "transform": {
            "scale": float(t.scale),
            "rotation": t.rotation.tolist(),
            "translation": t.translation.tolist(),
            "yaw_deg": float(math.degrees(math.atan2(-t.rotation[2, 0], t.rotation[0, 0]))),
        },
        "depth_scale": float(depth_scale),
        "density": {
            "median": float(np.median(hd)) if hd.size else 0.0,
            "min": float(hd.min()) if hd.size else 0.0,
            "threshold": float(dmask.threshold),
            "flagged": int(dmask.flags.sum()),
            "hull_pixels": int(dmask.hull.sum()),
        },
        "mirror_side": side,
        "mirror_fallbacks": fallbacks,
    }
    return FrontalizationOutput(texture, dmask, side, corrected, final, t, frontal.ravel(), diagnostics)
