"""Generic frontal depth template, its file format, and a synthetic renderer.

The shipped template is analytic: a smooth ellipsoidal face with nose,
brow, lip and chin relief, annotated with the 68-point landmark scheme.
Its image is exactly the 15%-margin crop of its own landmark hull, so a
frontal rendering cropped the same way reproduces template coordinates.

Template files are a 16-bit depth PNG (see :mod:`facefront.imfiles` for
the depth scale) with a sidecar ``<stem>.txt`` of 68 ``x y z`` lines and
an optional ``<stem>_texture.png`` albedo used only for rendering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError, DimensionError
from .geometry import Image, TriangleMesh, bilinear_sample, delaunay_triangulate
from .imfiles import read_depth, read_gray, write_depth, write_gray

PX_PER_UNIT = 48.0
DEFAULT_MARGIN = 0.15
BACKGROUND = 20.0
DATA_DIR = Path(__file__).parent / "data"

# 68-point layout in face units (u right in the image, v down); iBUG order.
_JAW = [(-0.92 * math.cos(math.pi * k / 16), 0.05 + math.sin(math.pi * k / 16)) for k in range(17)]
_BROW_R = [(u, -0.45 - 0.08 * math.sin(math.pi * (abs(u) - 0.15) / 0.6)) for u in (-0.75, -0.6, -0.45, -0.3, -0.15)]
_BROW_L = [(-u, v) for u, v in reversed(_BROW_R)]
_NOSE = [(0.0, -0.2), (0.0, -0.05), (0.0, 0.08), (0.0, 0.22),
         (-0.2, 0.32), (-0.1, 0.35), (0.0, 0.37), (0.1, 0.35), (0.2, 0.32)]
_EYE_R = [(-0.55, -0.2), (-0.45, -0.26), (-0.35, -0.26), (-0.25, -0.2), (-0.35, -0.14), (-0.45, -0.14)]
_EYE_L = [(0.25, -0.2), (0.35, -0.26), (0.45, -0.26), (0.55, -0.2), (0.45, -0.14), (0.35, -0.14)]
_MOUTH = [(-0.35, 0.6), (-0.22, 0.53), (-0.1, 0.5), (0.0, 0.52), (0.1, 0.5), (0.22, 0.53), (0.35, 0.6),
          (0.22, 0.69), (0.1, 0.72), (0.0, 0.73), (-0.1, 0.72), (-0.22, 0.69),
          (-0.28, 0.6), (-0.1, 0.575), (0.0, 0.58), (0.1, 0.575), (0.28, 0.6),
          (0.1, 0.64), (0.0, 0.645), (-0.1, 0.64)]
CANONICAL_LANDMARKS = np.array(_JAW + _BROW_R + _BROW_L + _NOSE + _EYE_R + _EYE_L + _MOUTH)
NOSE_BRIDGE = slice(27, 31)


@dataclass(frozen=True, eq=False)
class DepthTemplate:
    """Frontal depth image with 3-D landmarks and their XY Delaunay mesh."""

    depth: Image
    landmarks: np.ndarray
    texture: Image = None
    mesh: TriangleMesh = field(default=None)

    def __post_init__(self):
        lm = np.asarray(self.landmarks, dtype=np.float64).reshape(-1, 3)
        h, w = self.depth.shape
        if np.any(lm[:, :2] < 0) or np.any(lm[:, 0] > w - 1) or np.any(lm[:, 1] > h - 1):
            raise DataError("template landmarks must lie within the depth image")
        if self.texture is not None and self.texture.shape != self.depth.shape:
            raise DimensionError("template texture and depth differ in size")
        lm.setflags(write=False)
        object.__setattr__(self, "landmarks", lm)
        mesh = self.mesh if self.mesh is not None else delaunay_triangulate(lm[:, :2])
        if len(mesh.degenerate()):
            raise DataError("template mesh has degenerate triangles")
        object.__setattr__(self, "mesh", mesh)

    @property
    def shape(self):
        return self.depth.shape

    @property
    def n_landmarks(self):
        return len(self.landmarks)

    @property
    def midline(self):
        """x of the vertical symmetry axis (nose bridge for 68 points)."""
        if self.n_landmarks == 68:
            return float(np.mean(self.landmarks[NOSE_BRIDGE, 0]))
        return float(np.mean(self.landmarks[:, 0]))

    def landmarks2d(self):
        return self.landmarks[:, :2].ravel()


# ---------------------------------------------------------------------------
# analytic template


def _smooth_inside(level, width=0.02):
    # ~1 inside (level < 0), ~0 outside, anti-aliased edge
    return 0.5 * (1.0 - np.tanh(level / width))


def _depth_units(u, v):
    r = (u / 1.05) ** 2 + ((v - 0.2) / 1.25) ** 2
    valid = r < 1.0
    z = 0.75 * np.sqrt(np.clip(1.0 - r, 0.0, None))
    ramp = np.clip((v + 0.3) / 0.6, 0.0, 1.0)
    height = np.where(v <= 0.3, 0.30 * ramp ** 1.2, 0.30 * np.exp(-(((v - 0.3) / 0.06) ** 2)))
    sigma = 0.06 + 0.10 * ramp
    z += height * np.exp(-(u ** 2) / (2 * sigma ** 2))
    au = np.abs(u)
    z += 0.05 * np.exp(-(((v + 0.42) / 0.08) ** 2)) * np.exp(-((au - 0.42) ** 2) / (2 * 0.25 ** 2))
    z -= 0.06 * np.exp(-((au - 0.4) ** 2 / (2 * 0.12 ** 2) + (v + 0.2) ** 2 / (2 * 0.07 ** 2)))
    z += 0.04 * np.exp(-(u ** 2 / (2 * 0.22 ** 2) + (v - 0.6) ** 2 / (2 * 0.08 ** 2)))
    z += 0.04 * np.exp(-(u ** 2 / (2 * 0.2 ** 2) + (v - 0.95) ** 2 / (2 * 0.1 ** 2)))
    return np.clip(z, 0.0, None), valid


def _albedo(u, v, depth_px, valid):
    gy, gx = np.gradient(np.where(valid, depth_px, 0.0))
    normal = np.stack([-gx, -gy, np.ones_like(gx)])
    normal /= np.linalg.norm(normal, axis=0)
    light = np.array([0.0, -0.3, 1.0]) / math.hypot(0.3, 1.0)
    shade = np.clip(np.tensordot(light, normal, axes=1), 0.0, 1.0)
    tex = 90.0 + 110.0 * shade
    au = np.abs(u)

    def paint(level, value):
        nonlocal tex
        a = _smooth_inside(level)
        tex = (1 - a) * tex + a * value

    arch = -0.45 - 0.08 * np.sin(np.pi * np.clip(au - 0.15, 0, 0.6) / 0.6)
    brow = np.maximum(np.abs(v - arch) - 0.035, np.maximum(0.15 - au, au - 0.75))
    paint(brow, 60.0)
    paint(((au - 0.4) / 0.15) ** 2 + ((v + 0.2) / 0.06) ** 2 - 1.0, 225.0)
    paint(np.hypot(au - 0.4, v + 0.2) - 0.05, 45.0)
    paint(((au - 0.08) / 0.04) ** 2 + ((v - 0.34) / 0.02) ** 2 - 1.0, 50.0)
    paint((u / 0.35) ** 2 + ((v - 0.61) / 0.12) ** 2 - 1.0, 120.0)
    paint((u / 0.28) ** 2 + ((v - 0.6) / 0.025) ** 2 - 1.0, 35.0)
    return np.where(valid, tex, BACKGROUND)


@lru_cache(maxsize=None)
def synthetic_template():
    """The analytic template; depth quantised to the PNG depth resolution."""
    pts = CANONICAL_LANDMARKS * PX_PER_UNIT
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ext = hi - lo
    shift = np.ceil(DEFAULT_MARGIN * ext - lo)
    pts = pts + shift
    w, h = (np.ceil(pts.max(axis=0) + DEFAULT_MARGIN * ext) + 1).astype(int)
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    u, v = (xs - shift[0]) / PX_PER_UNIT, (ys - shift[1]) / PX_PER_UNIT
    z, valid = _depth_units(u, v)
    depth_px = np.rint(z * PX_PER_UNIT * 256.0) / 256.0
    depth = Image(np.where(valid, depth_px, 0.0), valid)
    texture = Image(_albedo(u, v, depth_px, valid))
    lz, ok = bilinear_sample(depth, pts[:, 0], pts[:, 1])
    assert ok.all()
    return DepthTemplate(depth, np.c_[pts, lz], texture)


def default_template():
    """The shipped template files, or the analytic template if they are absent."""
    path = DATA_DIR / "template.png"
    if path.exists():
        return load_template(path)
    return synthetic_template()


def save_template(template, path):
    path = Path(path)
    write_depth(path, template.depth)
    lines = [f"{x!r} {y!r} {z!r}" for x, y, z in template.landmarks.tolist()]
    path.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    if template.texture is not None:
        write_gray(path.with_name(path.stem + "_texture.png"), template.texture)


def load_template(path):
    path = Path(path)
    depth = read_depth(path)
    side = path.with_suffix(".txt")
    try:
        rows = [ln.split() for ln in side.read_text().splitlines() if ln.strip()]
        lm = np.array(rows, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise DataError(f"{side}: unreadable template landmark file ({exc})") from exc
    if lm.ndim != 2 or lm.shape[1] != 3:
        raise DataError(f"{side}: expected one 'x y z' triple per line")
    tex_path = path.with_name(path.stem + "_texture.png")
    texture = read_gray(tex_path) if tex_path.exists() else None
    return DepthTemplate(depth, lm, texture)


# ---------------------------------------------------------------------------
# rendering


def yaw_rotation(deg):
    a = math.radians(deg)
    return np.array([[math.cos(a), 0.0, math.sin(a)], [0.0, 1.0, 0.0], [-math.sin(a), 0.0, math.cos(a)]])


def head_pivot(template):
    h = template.shape[0]
    return np.array([template.midline, h / 2.0, -0.6 * PX_PER_UNIT])


def _project(points3d, template, yaw, linear, offset):
    if yaw == 0.0:
        rotated = np.asarray(points3d, dtype=np.float64)
    else:
        pivot = head_pivot(template)
        rotated = (points3d - pivot) @ yaw_rotation(yaw).T + pivot
    xy = rotated[:, :2] @ np.asarray(linear, dtype=np.float64).T + offset
    return xy, rotated[:, 2]


def project_landmarks(template, yaw=0.0, linear=None, offset=(0.0, 0.0)):
    """Flat 2-D landmark positions of a rendering with the given pose."""
    linear = np.eye(2) if linear is None else linear
    xy, _ = _project(template.landmarks, template, yaw, linear, np.asarray(offset, dtype=np.float64))
    return xy.ravel()


def render_face(template, yaw=0.0, linear=None, offset=(0.0, 0.0), canvas=None,
                background=BACKGROUND, supersample=3, gain=1.0, bias=0.0):
    """Orthographic z-buffered rendering of the textured template.

    The surface is rotated by ``yaw`` degrees about a vertical axis behind
    the face, then mapped by the 2x2 ``linear`` part and ``offset``.
    Returns the rendered image and the projected 68 landmarks (flat).
    """
    if template.texture is None:
        raise DataError("template has no texture to render")
    linear = np.eye(2) if linear is None else np.asarray(linear, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    th, tw = template.shape
    h, w = canvas if canvas is not None else (th, tw)
    lm2d, _ = _project(template.landmarks, template, yaw, linear, offset)

    if yaw == 0.0 and np.array_equal(linear, np.eye(2)) and np.array_equal(offset, np.round(offset)):
        ox, oy = int(offset[0]), int(offset[1])
        out = np.full((h, w), float(background))
        tex = np.where(template.depth.mask, template.texture.data, background)
        ys, xs = np.mgrid[0:th, 0:tw]
        keep = (ys + oy >= 0) & (ys + oy < h) & (xs + ox >= 0) & (xs + ox < w) & template.depth.mask
        out[ys[keep] + oy, xs[keep] + ox] = gain * tex[keep] + bias
        return Image(np.clip(out, 0, 255)), lm2d.ravel()

    k = (np.arange(supersample) + 0.5) / supersample - 0.5
    gy, gx = np.mgrid[0:th, 0:tw].astype(float)
    sx = (gx[..., None, None] + k[None, None, None, :]).ravel()
    sy = (gy[..., None, None] + k[None, None, :, None]).ravel()
    z, ok = bilinear_sample(template.depth, sx, sy)
    tex, _ = bilinear_sample(template.texture, sx, sy)
    pts = np.c_[sx[ok], sy[ok], z[ok]]
    xy, depth = _project(pts, template, yaw, linear, offset)
    tex = tex[ok]
    px = np.rint(xy).astype(np.int64)
    inside = (px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)
    px, depth, tex = px[inside], depth[inside], tex[inside]
    flat = px[:, 1] * w + px[:, 0]
    order = np.lexsort((depth, flat))
    flat, tex = flat[order], tex[order]
    last = np.r_[flat[1:] != flat[:-1], True] if len(flat) else np.zeros(0, bool)
    out = np.full(h * w, float(background))
    out[flat[last]] = gain * tex[last] + bias
    covered = np.zeros(h * w, bool)
    covered[flat[last]] = True
    out, covered = out.reshape(h, w), covered.reshape(h, w)
    region = ndimage.binary_closing(covered, structure=np.ones((3, 3)), iterations=2)
    for _ in range(3):
        holes = region & ~covered
        if not holes.any():
            break
        num = ndimage.convolve(np.where(covered, out, 0.0), np.ones((3, 3)), mode="constant")
        den = ndimage.convolve(covered.astype(float), np.ones((3, 3)), mode="constant")
        fill = holes & (den > 0)
        out[fill] = num[fill] / den[fill]
        covered |= fill
    return Image(np.clip(out, 0, 255)), lm2d.ravel()


def frontal_render(template, offset=(20, 20), pad=20):
    """Frontal rendering placed at an integer offset inside a padded canvas."""
    th, tw = template.shape
    canvas = (th + offset[1] + pad, tw + offset[0] + pad)
    return render_face(template, 0.0, offset=offset, canvas=canvas)


def yaw_render(template, yaw, pad=20):
    """Rendering at ``yaw`` degrees with the face roughly centred in the canvas."""
    th, tw = template.shape
    canvas = (th + 2 * pad, tw + 2 * pad)
    return render_face(template, yaw, offset=(pad, pad), canvas=canvas)
