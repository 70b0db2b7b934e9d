"""Numeric geometry shared by the landmarker and the frontalizer.

Point sets are plain ``numpy`` arrays of shape ``(n, 2)`` or ``(n, 3)``.
Images carry a validity mask next to their samples so that warps and
texture maps can report which pixels they actually produced.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, DimensionError

DEGENERATE_AREA = 1e-12


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Image:
    """Row-major single-channel image (intensity or depth) with a validity mask."""

    data: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionError(f"image must be 2-D, got shape {data.shape}")
        mask = np.ones(data.shape, bool) if self.mask is None else np.asarray(self.mask, bool)
        if mask.shape != data.shape:
            raise DimensionError("mask shape does not match image shape")
        if not np.all(np.isfinite(data[mask])):
            raise ValueError("image has non-finite samples on valid pixels")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "mask", _frozen(mask))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class SimilarityTransform3D:
    """Homogeneous 4x4 matrix ``[[s*R, t], [0, 0, 0, 1]]``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise DimensionError("similarity transform must be 4x4")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("last row of a similarity transform must be (0, 0, 0, 1)")
        sr = m[:3, :3]
        s = np.cbrt(np.linalg.det(sr))
        if not s > 0:
            raise ValueError("similarity transform needs positive scale and det(R) = +1")
        r = sr / s
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise ValueError("rotation block is not orthonormal")
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def from_params(cls, scale=1.0, rotation=None, translation=None):
        m = np.eye(4)
        r = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        m[:3, :3] = scale * r
        if translation is not None:
            m[:3, 3] = translation
        return cls(m)

    @classmethod
    def identity(cls):
        return cls(np.eye(4))

    @property
    def scale(self):
        return float(np.cbrt(np.linalg.det(self.matrix[:3, :3])))

    @property
    def rotation(self):
        return self.matrix[:3, :3] / self.scale

    @property
    def translation(self):
        return self.matrix[:3, 3].copy()

    def inverse(self):
        s, r, t = self.scale, self.rotation, self.translation
        return SimilarityTransform3D.from_params(1.0 / s, r.T, -(r.T @ t) / s)

    def __matmul__(self, other):
        return SimilarityTransform3D(self.matrix @ other.matrix)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """2-D vertices plus triangles given as index triples.

    Degeneracy is not enforced at construction because meshes built from
    detected landmarks may fold; callers check with :meth:`degenerate`.
    """

    vertices: np.ndarray
    triangles: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise DimensionError("mesh vertices must have shape (n, 2)")
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise DimensionError("triangle index out of range")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))

    def signed_areas(self):
        p = self.vertices[self.triangles]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )

    def degenerate(self, reference=None):
        """Indices of triangles that are collapsed, or flipped relative to ``reference``."""
        areas = self.signed_areas()
        bad = np.abs(areas) < DEGENERATE_AREA
        if reference is not None:
            bad |= np.sign(areas) != np.sign(reference.signed_areas())
        return np.flatnonzero(bad)

    def with_vertices(self, vertices):
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
        if vertices.shape != self.vertices.shape:
            raise DimensionError("replacement vertices must match the mesh vertex count")
        return TriangleMesh(vertices, self.triangles)


# ---------------------------------------------------------------------------
# 3-D similarity alignment


def jacobi_eigh(a, tol=1e-15, max_sweeps=64):
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors in columns,
    unsorted.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.linalg.norm(a), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                j = np.eye(n)
                j[p, p] = j[q, q] = c
                j[p, q] = s
                j[q, p] = -s
                a = j.T @ a @ j
                a[p, q] = a[q, p] = 0.0
                v = v @ j
    return np.diag(a).copy(), v


def quaternion_to_rotation(q):
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (y * x + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (z * x - w * y), 2 * (z * y + w * x), w * w - x * x - y * y + z * z],
    ])


def horn_align(src, dst):
    """Least-squares similarity transform taking ``src`` points onto ``dst``.

    Closed-form quaternion solution: the rotation is the dominant
    eigenvector of the 4x4 symmetric matrix built from the centred
    cross-covariance; scale and translation follow in closed form.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if len(src) != len(dst):
        raise DimensionError(f"point count mismatch: {len(src)} vs {len(dst)}")
    if len(src) < 3:
        raise DimensionError("horn_align needs at least 3 point pairs")
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - cs, dst - cd
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= 1e-10 * sv[0]:
        raise DegenerateGeometryError("source points are collinear or coincident")

    m = a.T @ b
    (sxx, sxy, sxz), (syx, syy, syz), (szx, szy, szz) = m
    n = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    w, vecs = jacobi_eigh(n)
    r = quaternion_to_rotation(vecs[:, int(np.argmax(w))])
    s = float(np.sum(b * (a @ r.T)) / np.sum(a * a))
    if not s > 0:
        raise DegenerateGeometryError("alignment produced a non-positive scale")
    t = cd - s * (r @ cs)
    return SimilarityTransform3D.from_params(s, r, t)


def apply_transform(t, p):
    """Apply a homogeneous transform to one point ``(3,)`` or many ``(n, 3)``."""
    p = np.asarray(p, dtype=np.float64)
    ph = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)
    out = ph @ t.matrix.T
    return out[..., :3] / out[..., 3:]


# ---------------------------------------------------------------------------
# Delaunay triangulation (Bowyer-Watson)


def _circumcircle(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    return ux, uy, (ax - ux) ** 2 + (ay - uy) ** 2


def _ccw(pts, i, j, k):
    (ax, ay), (bx, by), (cx, cy) = pts[i], pts[j], pts[k]
    if (bx - ax) * (cy - ay) - (cx - ax) * (by - ay) < 0:
        return i, k, j
    return i, j, k


def delaunay_triangulate(points):
    """Delaunay triangulation of a 2-D point set.

    Triangles are returned with positive signed area in (x, y).
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(p)
    if n < 3:
        raise DegenerateGeometryError("need at least 3 points to triangulate")
    if len(np.unique(p, axis=0)) != n:
        raise DegenerateGeometryError("coincident input points")
    centre = p.mean(axis=0)
    extent = np.max(np.abs(p - centre))
    q = (p - centre) / extent
    sv = np.linalg.svd(q - q.mean(axis=0), compute_uv=False)
    if sv[1] <= 1e-12 * sv[0]:
        raise DegenerateGeometryError("input points are collinear")

    big = 1e3
    pts = [tuple(x) for x in q] + [(0.0, 4 * big), (-4 * big, -2 * big), (4 * big, -2 * big)]
    tris = {}
    first = _ccw(pts, n, n + 1, n + 2)
    tris[first] = _circumcircle(*(pts[i] for i in first))

    for i in range(n):
        px, py = pts[i]
        bad = []
        for tri, (ux, uy, r2) in tris.items():
            if (px - ux) ** 2 + (py - uy) ** 2 < r2 * (1.0 - 1e-12):
                bad.append(tri)
        edges = {}
        for tri in bad:
            for e in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(e), max(e))
                edges[key] = None if key in edges else e
            del tris[tri]
        for e in edges.values():
            if e is None:
                continue
            tri = _ccw(pts, e[0], e[1], i)
            tris[tri] = _circumcircle(*(pts[k] for k in tri))

    out = [t for t in tris if max(t) < n]
    mesh = TriangleMesh(p, np.array(sorted(out), dtype=np.int64).reshape(-1, 3))
    keep = np.abs(mesh.signed_areas()) >= DEGENERATE_AREA
    return TriangleMesh(p, mesh.triangles[keep])


# ---------------------------------------------------------------------------
# Piecewise affine warping


def bilinear_sample(image, x, y):
    """Sample ``image`` at float coordinates; returns ``(values, valid)``.

    Samples are invalid outside the image or when a neighbour with non-zero
    weight is masked out. Coordinates within 1e-9 of an integer snap to it.
    """
    h, w = image.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xr, yr = np.rint(x), np.rint(y)
    x = np.where(np.abs(x - xr) < 1e-9, xr, x)
    y = np.where(np.abs(y - yr) < 1e-9, yr, y)
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.floor(xc).astype(np.int64)
    y0 = np.floor(yc).astype(np.int64)
    fx, fy = xc - x0, yc - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    d, m = image.data, image.mask
    out = np.zeros(x.shape)
    for xi, yi, wt in (
        (x0, y0, (1 - fx) * (1 - fy)),
        (x1, y0, fx * (1 - fy)),
        (x0, y1, (1 - fx) * fy),
        (x1, y1, fx * fy),
    ):
        used = wt > 0
        valid &= ~used | m[yi, xi]
        out += np.where(used, wt * d[yi, xi], 0.0)
    return np.where(valid, out, 0.0), valid


def _barycentric(tri, px, py):
    (x0, y0), (x1, y1), (x2, y2) = tri
    den = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
    l0 = ((y1 - y2) * (px - x2) + (x2 - x1) * (py - y2)) / den
    l1 = ((y2 - y0) * (px - x2) + (x0 - x2) * (py - y2)) / den
    return l0, l1, 1.0 - l0 - l1


def piecewise_affine_warp(src_mesh, dst_mesh, image, out_shape=None, inside_tol=1e-9):
    """Warp ``image`` so that ``src_mesh`` vertices land on ``dst_mesh`` vertices.

    Every output pixel inside a destination triangle is pulled back through
    that triangle's affine map and bilinearly sampled. Pixels outside every
    triangle, or whose preimage leaves the source image, are masked out.
    """
    if not np.array_equal(src_mesh.triangles, dst_mesh.triangles):
        raise DimensionError("source and destination meshes must share triangle topology")
    if len(src_mesh.vertices) != len(dst_mesh.vertices):
        raise DimensionError("source and destination meshes differ in vertex count")
    bad = dst_mesh.degenerate()
    if len(bad):
        raise DegenerateGeometryError(f"degenerate destination triangles: {bad.tolist()}")
    h, w = image.shape if out_shape is None else out_shape
    src_x = np.zeros((h, w))
    src_y = np.zeros((h, w))
    covered = np.zeros((h, w), bool)
    for tri in dst_mesh.triangles:
        d = dst_mesh.vertices[tri]
        s = src_mesh.vertices[tri]
        lo = np.maximum(np.floor(d.min(axis=0) - inside_tol), 0).astype(int)
        hi = np.minimum(np.ceil(d.max(axis=0) + inside_tol), [w - 1, h - 1]).astype(int)
        if np.any(hi < lo):
            continue
        ys, xs = np.mgrid[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]
        l0, l1, l2 = _barycentric(d, xs.astype(float), ys.astype(float))
        inside = (l0 >= -inside_tol) & (l1 >= -inside_tol) & (l2 >= -inside_tol)
        inside &= ~covered[ys, xs]
        yy, xx = ys[inside], xs[inside]
        src_x[yy, xx] = l0[inside] * s[0, 0] + l1[inside] * s[1, 0] + l2[inside] * s[2, 0]
        src_y[yy, xx] = l0[inside] * s[0, 1] + l1[inside] * s[1, 1] + l2[inside] * s[2, 1]
        covered[yy, xx] = True
    values, valid = bilinear_sample(image, src_x, src_y)
    valid &= covered
    return Image(np.where(valid, values, 0.0), valid)


def mesh_coverage(mesh, shape, inside_tol=1e-9):
    """Per-pixel count of triangles covering each pixel centre."""
    h, w = shape
    count = np.zeros((h, w), dtype=np.int64)
    for tri in mesh.triangles:
        d = mesh.vertices[tri]
        lo = np.maximum(np.floor(d.min(axis=0) - inside_tol), 0).astype(int)
        hi = np.minimum(np.ceil(d.max(axis=0) + inside_tol), [w - 1, h - 1]).astype(int)
        if np.any(hi < lo):
            continue
        ys, xs = np.mgrid[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]
        l0, l1, l2 = _barycentric(d, xs.astype(float), ys.astype(float))
        inside = (l0 >= -inside_tol) & (l1 >= -inside_tol) & (l2 >= -inside_tol)
        count[ys[inside], xs[inside]] += 1
    return count
