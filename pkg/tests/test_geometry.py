import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from facefront.errors import DegenerateGeometryError, DimensionError
from facefront.geometry import (
    Image,
    SimilarityTransform3D,
    TriangleMesh,
    apply_transform,
    delaunay_triangulate,
    horn_align,
    jacobi_eigh,
    mesh_coverage,
    piecewise_affine_warp,
)
from oracles import circumcircle_violations, random_rotation, rot_z


def test_jacobi_matches_characteristic_equation(rng):
    a = rng.normal(size=(4, 4))
    a = a + a.T
    w, v = jacobi_eigh(a)
    assert np.allclose(a @ v, v * w, atol=1e-12)
    assert np.allclose(v.T @ v, np.eye(4), atol=1e-12)


def test_horn_identity():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    t = horn_align(pts, pts)
    assert np.allclose(t.matrix, np.eye(4), atol=1e-12)


def test_horn_recovers_rotation_and_translation(rng):
    src = rng.normal(size=(10, 3))
    truth = SimilarityTransform3D.from_params(1.0, rot_z(90), [3, -1, 2])
    dst = src @ rot_z(90).T + [3, -1, 2]
    t = horn_align(src, dst)
    assert np.max(np.abs(t.matrix - truth.matrix)) <= 1e-9


def test_horn_recovers_pure_scale(rng):
    src = rng.normal(size=(10, 3))
    t = horn_align(src, 2.0 * src)
    assert abs(t.scale - 2.0) <= 1e-9
    assert np.max(np.abs(t.rotation - np.eye(3))) <= 1e-9
    assert np.max(np.abs(t.translation)) <= 1e-9


@pytest.mark.parametrize("src, dst, exc", [
    (np.zeros((4, 3)), np.zeros((5, 3)), DimensionError),
    (np.eye(3)[:2], np.eye(3)[:2], DimensionError),
    (np.outer(np.arange(5.0), [1, 2, 3]), np.outer(np.arange(5.0), [1, 2, 3]), DegenerateGeometryError),
    (np.ones((4, 3)), np.ones((4, 3)), DegenerateGeometryError),
])
def test_horn_errors(src, dst, exc):
    with pytest.raises(exc):
        horn_align(src, dst)


def test_horn_residual_is_local_minimum(rng):
    src = rng.normal(size=(12, 3))
    dst = 1.3 * src @ random_rotation(rng).T + rng.normal(size=3) + 0.05 * rng.normal(size=(12, 3))
    t = horn_align(src, dst)

    def residual(m):
        return np.sum((src @ m[:3, :3].T + m[:3, 3] - dst) ** 2)

    best = residual(t.matrix)
    for _ in range(100):
        dq = 1e-4 * rng.normal(size=3)
        kx = np.array([[0, -dq[2], dq[1]], [dq[2], 0, -dq[0]], [-dq[1], dq[0], 0]])
        r = (np.eye(3) + kx) @ t.rotation
        u, _, vt = np.linalg.svd(r)
        m = np.eye(4)
        m[:3, :3] = t.scale * (1 + 1e-4 * rng.normal()) * (u @ vt)
        m[:3, 3] = t.translation + 1e-4 * rng.normal(size=3)
        assert residual(m) >= best - 1e-12


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    scale=st.floats(0.5, 2.0),
    n=st.integers(4, 30),
)
def test_horn_roundtrip_property(seed, scale, n):
    rng = np.random.default_rng(seed)
    src = rng.uniform(-5, 5, size=(n, 3))
    truth = SimilarityTransform3D.from_params(scale, random_rotation(rng), rng.uniform(-10, 10, 3))
    t = horn_align(src, apply_transform(truth, src))
    assert np.max(np.abs(t.matrix - truth.matrix)) <= 1e-9


def test_apply_transform_trivial():
    assert np.allclose(apply_transform(SimilarityTransform3D.identity(), [1, 2, 3]), [1, 2, 3])
    t = SimilarityTransform3D.from_params(translation=[1, 0, 0])
    assert np.array_equal(apply_transform(t, [0, 0, 0]), [1, 0, 0])


def test_apply_transform_composition(rng):
    for _ in range(20):
        a = SimilarityTransform3D.from_params(rng.uniform(0.5, 2), random_rotation(rng), rng.normal(size=3))
        b = SimilarityTransform3D.from_params(rng.uniform(0.5, 2), random_rotation(rng), rng.normal(size=3))
        p = rng.normal(size=3)
        assert np.allclose(apply_transform(a @ b, p), apply_transform(a, apply_transform(b, p)), atol=1e-9)


def test_apply_transform_preserves_distance_ratios(rng):
    s = 1.7
    t = SimilarityTransform3D.from_params(s, random_rotation(rng), rng.normal(size=3))
    p = rng.normal(size=(6, 3))
    q = apply_transform(t, p)
    d0 = np.linalg.norm(p[:, None] - p[None], axis=-1)
    d1 = np.linalg.norm(q[:, None] - q[None], axis=-1)
    assert np.allclose(d1, s * d0, atol=1e-9)


def test_similarity_inverse(rng):
    t = SimilarityTransform3D.from_params(0.7, random_rotation(rng), rng.normal(size=3))
    assert np.allclose((t @ t.inverse()).matrix, np.eye(4), atol=1e-12)


def test_similarity_rejects_reflection():
    with pytest.raises(ValueError):
        SimilarityTransform3D.from_params(1.0, np.diag([1.0, 1.0, -1.0]))


def test_delaunay_three_points():
    mesh = delaunay_triangulate([[0, 0], [1, 0], [0, 1]])
    assert len(mesh.triangles) == 1


def test_delaunay_unit_square():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    mesh = delaunay_triangulate(pts)
    assert len(mesh.triangles) == 2
    assert circumcircle_violations(pts, mesh.triangles) == 0


def test_delaunay_random_points(rng):
    pts = rng.uniform(0, 100, size=(20, 2))
    mesh = delaunay_triangulate(pts)
    assert circumcircle_violations(pts, mesh.triangles) == 0
    assert np.all(mesh.signed_areas() > 0)


@pytest.mark.parametrize("pts", [
    [[0, 0], [1, 1], [2, 2], [3, 3]],
    [[0, 0], [1, 0]],
    [[0, 0], [0, 0], [1, 1]],
])
def test_delaunay_degenerate(pts):
    with pytest.raises(DegenerateGeometryError):
        delaunay_triangulate(pts)


def test_delaunay_covers_hull_without_overlap(rng):
    from scipy.spatial import ConvexHull
    from matplotlib.path import Path

    for _ in range(5):
        pts = rng.uniform(0, 60, size=(25, 2))
        mesh = delaunay_triangulate(pts)
        # fine grid: scale everything by 4 and count coverage at pixel centres
        fine = TriangleMesh(mesh.vertices * 4, mesh.triangles)
        cov = mesh_coverage(fine, (241, 241), inside_tol=-1e-6)
        hull = Path(pts[ConvexHull(pts).vertices] * 4)
        ys, xs = np.mgrid[0:241, 0:241]
        inside = hull.contains_points(np.c_[xs.ravel(), ys.ravel()], radius=-1e-3).reshape(cov.shape)
        assert cov.max() <= 1
        assert np.mean(cov[inside] == 1) > 0.99
        # interiors disjoint: total area equals hull area
        assert np.isclose(mesh.signed_areas().sum(), ConvexHull(pts).volume)


def _ramp(h, w, a=2.0, b=-0.5, c=10.0):
    ys, xs = np.mgrid[0:h, 0:w]
    return Image(a * xs + b * ys + c)


def test_warp_identity():
    img = _ramp(20, 20)
    mesh = TriangleMesh([[2, 2], [17, 3], [9, 16]], [[0, 1, 2]])
    out = piecewise_affine_warp(mesh, mesh, img)
    assert np.array_equal(out.data[out.mask], img.data[out.mask])
    assert out.mask.sum() > 50


def test_warp_translated_triangle_vertex_exact(rng):
    img = Image(rng.uniform(0, 255, size=(30, 30)))
    src = TriangleMesh([[2, 3], [12, 4], [6, 15]], [[0, 1, 2]])
    dst = src.with_vertices(src.vertices + [5, 0])
    out = piecewise_affine_warp(src, dst, img)
    for (sx, sy), (dx, dy) in zip(src.vertices.astype(int), dst.vertices.astype(int)):
        assert out.mask[dy, dx]
        assert out.data[dy, dx] == img.data[sy, sx]


def test_warp_linear_ramp_affine_composition():
    h, w = 40, 40
    img = _ramp(h, w)
    src_pts = np.array([[5.0, 5.0], [30.0, 8.0], [12.0, 33.0], [34.0, 31.0]])
    # destination = known affine image of the source points
    A = np.array([[0.9, 0.2], [-0.1, 1.1]])
    off = np.array([1.5, -2.0])
    dst_pts = src_pts @ A.T + off
    tris = [[0, 1, 2], [1, 3, 2]]
    out = piecewise_affine_warp(TriangleMesh(src_pts, tris), TriangleMesh(dst_pts, tris), img)
    ys, xs = np.nonzero(out.mask)
    q = np.c_[xs, ys] - off
    pre = q @ np.linalg.inv(A).T
    expected = 2.0 * pre[:, 0] - 0.5 * pre[:, 1] + 10.0
    assert len(xs) > 300
    assert np.max(np.abs(out.data[ys, xs] - expected)) <= 1e-6


def test_warp_marks_outside_source_invalid():
    img = _ramp(10, 10)
    src = TriangleMesh([[-5, 0], [9, 0], [0, 9]], [[0, 1, 2]])
    dst = TriangleMesh([[0, 0], [9, 0], [0, 9]], [[0, 1, 2]])
    out = piecewise_affine_warp(src, dst, img)
    assert not out.mask[0, 0]
    assert out.mask[0, 9]


def test_warp_errors():
    img = _ramp(10, 10)
    a = TriangleMesh([[0, 0], [5, 0], [0, 5]], [[0, 1, 2]])
    with pytest.raises(DimensionError):
        piecewise_affine_warp(a, TriangleMesh([[0, 0], [5, 0], [0, 5]], [[0, 2, 1]]), img)
    with pytest.raises(DegenerateGeometryError):
        piecewise_affine_warp(a, TriangleMesh([[0, 0], [1, 1], [2, 2]], [[0, 1, 2]]), img)


def test_image_validation():
    with pytest.raises(DimensionError):
        Image(np.zeros(5))
    with pytest.raises(ValueError):
        Image(np.array([[np.nan]]))
    img = Image(np.array([[np.nan]]), np.array([[False]]))
    assert img.shape == (1, 1)
    with pytest.raises(ValueError):
        img.data[0, 0] = 1.0
