import numpy as np
import pytest

from facefront.errors import StageError
from facefront.frontalizer import (
    AlignedModel,
    FrontalizedCloud,
    choose_mirror_side,
    crop_face,
    default_mean_shape,
    estimate_frontal_transform,
    fit_depth_model,
    frontalize,
    frontalize_cloud,
    map_texture,
    map_to_mean_shape,
    mirror_fill,
)
from facefront.geometry import Image, SimilarityTransform3D, bilinear_sample, mesh_coverage
from facefront.template import frontal_render, synthetic_template, yaw_render

from oracles import rot_y


@pytest.fixture(scope="module")
def tpl():
    return synthetic_template()


@pytest.fixture(scope="module")
def hull(tpl):
    return mesh_coverage(tpl.mesh, tpl.shape) > 0


# crop -----------------------------------------------------------------------


def test_crop_identity_with_zero_margin(rng):
    img = Image(rng.uniform(0, 255, (30, 40)))
    lm = np.array([0, 0, 39, 0, 39, 29, 0, 29, 20, 10.5])
    crop, local, origin = crop_face(img, lm, margin=0.0)
    assert origin == (0, 0)
    assert np.array_equal(crop.data, img.data)
    assert np.array_equal(local, lm)


def test_crop_of_centred_square_hull(rng):
    img = Image(rng.uniform(0, 255, (200, 200)))
    # hull 80 px wide, 15% margin adds 12 px per side
    lm = np.array([60, 60, 140, 60, 140, 140, 60, 140, 100, 100.0])
    crop, local, (x0, y0) = crop_face(img, lm, margin=0.15)
    assert (x0, y0) == (48, 48)
    assert crop.shape == (1.3 * 80 + 1, 1.3 * 80 + 1)
    assert np.array_equal(local, lm - 48)
    assert np.array_equal(crop.data, img.data[48:153, 48:153])


def test_crop_translation_invariance(rng):
    face = rng.uniform(0, 255, (50, 50))
    lm = np.array([10, 12, 40, 11, 25, 38.0])
    a = np.zeros((120, 120))
    b = np.zeros((120, 120))
    a[5:55, 7:57] = face
    b[60:110, 40:90] = face
    ca, la, _ = crop_face(Image(a), lm + np.tile([7, 5], 3))
    cb, lb, _ = crop_face(Image(b), lm + np.tile([40, 60], 3))
    assert np.array_equal(ca.data, cb.data)
    assert np.array_equal(la, lb)


def test_crop_errors():
    img = Image(np.zeros((20, 20)))
    with pytest.raises(ValueError):
        crop_face(img, [1, 1, 25, 3, 4, 5])
    with pytest.raises(ValueError):
        crop_face(img, [5, 5, 5, 9, 5, 12])


# depth fit ------------------------------------------------------------------


def test_fit_identity_reproduces_template_depth(tpl):
    aligned = fit_depth_model(tpl, tpl.depth, tpl.landmarks2d())
    v = aligned.depth.mask
    assert v.sum() > 0.9 * (mesh_coverage(tpl.mesh, tpl.shape) > 0).sum()
    assert np.max(np.abs(aligned.depth.data[v] - tpl.depth.data[v])) <= 1e-6
    assert np.array_equal(aligned.landmarks3d, tpl.landmarks)


def test_fit_scaled_landmarks_keep_landmark_depths(tpl):
    big = Image(np.zeros((2 * tpl.shape[0], 2 * tpl.shape[1])))
    lm = 2.0 * tpl.landmarks2d()
    aligned = fit_depth_model(tpl, big, lm)
    assert np.max(np.abs(aligned.landmarks3d[:, 2] - tpl.landmarks[:, 2])) <= 1e-6
    # a global x2 scaling pulls every output pixel back to half its coordinates
    ys, xs = np.nonzero(aligned.depth.mask)
    expect, ok = bilinear_sample(tpl.depth, xs / 2.0, ys / 2.0)
    assert ok.all()
    assert np.max(np.abs(aligned.depth.data[ys, xs] - expect)) <= 1e-6


def test_fit_rejects_collapsed_triangle(tpl):
    lm = tpl.landmarks[:, :2].copy()
    a, b, c = tpl.mesh.triangles[0]
    lm[c] = (lm[a] + lm[b]) / 2
    with pytest.raises(StageError) as exc:
        fit_depth_model(tpl, tpl.depth, lm.ravel())
    assert exc.value.stage == "fit-failed"


# transform ------------------------------------------------------------------


def test_frontal_transform_identity(tpl):
    t = estimate_frontal_transform(tpl.landmarks, tpl.landmarks)
    assert np.max(np.abs(t.matrix - np.eye(4))) <= 1e-9


def test_frontal_transform_inverts_yaw(tpl):
    r = rot_y(30)
    s_a = tpl.landmarks @ r.T
    t = estimate_frontal_transform(s_a, tpl.landmarks)
    assert np.max(np.abs(t.rotation - r.T)) <= 1e-9
    assert abs(t.scale - 1) <= 1e-9


def test_frontal_transform_scale(tpl):
    t = estimate_frontal_transform(0.5 * tpl.landmarks, tpl.landmarks)
    assert abs(t.scale - 2.0) <= 1e-9


def test_frontal_transform_degenerate():
    line = np.c_[np.arange(5.0), np.zeros(5), np.zeros(5)]
    with pytest.raises(StageError) as exc:
        estimate_frontal_transform(line, line)
    assert exc.value.stage == "transform-degenerate"


# cloud ----------------------------------------------------------------------


def _aligned(rng, h=6, w=7):
    mask = rng.uniform(size=(h, w)) > 0.3
    return AlignedModel(Image(rng.uniform(0, 20, (h, w)), mask), np.zeros((3, 3)))


def test_cloud_identity(rng):
    a = _aligned(rng)
    c = frontalize_cloud(a, SimilarityTransform3D.identity())
    assert len(c.points) == a.depth.mask.sum()
    assert np.array_equal(c.points[:, 0], c.cols) and np.array_equal(c.points[:, 1], c.rows)
    assert np.array_equal(c.points[:, 2], a.depth.data[c.rows, c.cols])


def test_cloud_translation(rng):
    a = _aligned(rng)
    base = frontalize_cloud(a, SimilarityTransform3D.identity()).points
    moved = frontalize_cloud(a, SimilarityTransform3D.from_params(translation=[1, -2, 3])).points
    assert np.max(np.abs(moved - base - [1, -2, 3])) < 1e-12


def test_cloud_yaw_matches_matmul(rng):
    a = _aligned(rng)
    m = SimilarityTransform3D.from_params(1.3, rot_y(30), [2, 0, -1])
    c = frontalize_cloud(a, m)
    p = np.c_[c.cols, c.rows, a.depth.data[c.rows, c.cols], np.ones(len(c.rows))]
    assert np.max(np.abs(c.points - (p @ m.matrix.T)[:, :3])) <= 1e-12


# texture mapping ------------------------------------------------------------


def test_map_texture_identity_passthrough(tpl, hull):
    aligned = fit_depth_model(tpl, tpl.texture, tpl.landmarks2d())
    cloud = frontalize_cloud(aligned, SimilarityTransform3D.identity())
    tex, dm = map_texture(cloud, tpl.texture, tpl.shape, hull)
    v = aligned.depth.mask
    assert np.array_equal(tex.data[v], tpl.texture.data[v])
    assert np.all(dm.density[hull] == 1.0)
    assert not dm.flags.any()


def test_half_density_region():
    h, w = 40, 40
    rows, cols = np.mgrid[0:h, 0:w]
    keep = (cols >= 20) | (cols % 2 == 0)
    r, c = rows[keep], cols[keep]
    pts = np.c_[c, r, np.zeros(len(r))].astype(float)
    cloud = FrontalizedCloud(pts, r, c)
    src = Image(np.full((h, w), 50.0))
    _, dm = map_texture(cloud, src, (h, w), np.ones((h, w), bool))
    left = dm.density[:, 2:18].mean()
    right = dm.density[:, 22:38].mean()
    assert abs(left / right - 0.5) <= 0.1


def test_single_hole_is_interpolated():
    h, w = 9, 9
    rows, cols = np.mgrid[0:h, 0:w]
    keep = ~((rows == 4) & (cols == 4))
    r, c = rows[keep], cols[keep]
    cloud = FrontalizedCloud(np.c_[c, r, np.zeros(len(r))].astype(float), r, c)
    tex, dm = map_texture(cloud, Image(np.full((h, w), 100.0)), (h, w), np.ones((h, w), bool))
    assert dm.counts[4, 4] == 0
    assert tex.data[4, 4] == pytest.approx(100.0, abs=1e-12)


def test_empty_cloud():
    cloud = FrontalizedCloud(np.array([[100.0, 100.0, 0.0]]), np.array([0]), np.array([0]))
    with pytest.raises(StageError) as exc:
        map_texture(cloud, Image(np.ones((3, 3))), (5, 5), np.ones((5, 5), bool))
    assert exc.value.stage == "empty-cloud"


# mirror side and fill -------------------------------------------------------


def test_mirror_side_ties_go_left(rng):
    lm = rng.uniform(0, 100, 136)
    assert choose_mirror_side(lm, np.ones(68)) == "left"


def test_mirror_side_right_when_better(rng):
    lm = rng.uniform(0, 100, 136)
    cx = lm[0::2].mean()
    q = np.where(lm[0::2] > cx, 0.9, 0.2)
    assert choose_mirror_side(lm, q) == "right"


def test_mirror_side_matches_brute_force():
    rng = np.random.default_rng(77)
    for _ in range(50):
        lm = rng.uniform(0, 100, 136)
        q = rng.uniform(size=68)
        xs = lm[0::2]
        cx = sum(xs) / len(xs)
        lq = [qq for x, qq in zip(xs, q) if x < cx]
        rq = [qq for x, qq in zip(xs, q) if x > cx]
        expect = "right" if sum(rq) / len(rq) > sum(lq) / len(lq) else "left"
        assert choose_mirror_side(lm, q) == expect


def test_asymmetric_noop_without_flags(rng):
    tex = Image(rng.uniform(0, 255, (20, 30)))
    out, events = mirror_fill(tex, np.zeros((20, 30), bool), "left", "asymmetric", 15)
    assert np.array_equal(out.data, tex.data) and events == 0


def test_single_flag_reflects_about_midline(rng):
    tex = Image(rng.uniform(0, 255, (224, 224)))
    flags = np.zeros((224, 224), bool)
    flags[50, 10] = True
    out, events = mirror_fill(tex, flags, "left", "asymmetric", 112)
    assert out.data[50, 10] == tex.data[50, 214]
    diff = out.data != tex.data
    assert diff.sum() == 1 and events == 0


def test_flagged_mirror_source_falls_back(rng):
    tex = Image(np.full((10, 10), 80.0))
    flags = np.zeros((10, 10), bool)
    flags[3, 2] = flags[3, 6] = True
    out, events = mirror_fill(tex, flags, "left", "asymmetric", 4)
    assert events == 2
    assert out.data[3, 2] == pytest.approx(80.0) and out.data[3, 6] == pytest.approx(80.0)


@pytest.mark.parametrize("side", ["left", "right"])
def test_symmetric_mode_is_mirror_consistent(rng, side):
    tex = Image(rng.uniform(0, 255, (16, 21)))
    mid = 9
    out, _ = mirror_fill(tex, np.zeros((16, 21), bool), side, "symmetric", mid)
    for x in range(21):
        xm = 2 * mid - x
        if 0 <= xm < 21:
            assert np.array_equal(out.data[:, x], out.data[:, xm])
    source = slice(0, mid + 1) if side == "left" else slice(mid, 21)
    assert np.array_equal(out.data[:, source], tex.data[:, source])


def test_mirror_fill_bad_mode(rng):
    tex = Image(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        mirror_fill(tex, np.zeros((4, 4), bool), "left", "sideways", 2)


# mean shape -----------------------------------------------------------------


def test_mean_shape_layout(tpl):
    mean = default_mean_shape(tpl)
    assert mean.shape == (224, 224)
    assert mean.midline == 112.0
    assert mean.points.min() >= 0 and mean.points.max() <= 223
    assert len(mean.mesh.degenerate()) == 0


def test_mean_shape_identity_warp(tpl, rng):
    mean = default_mean_shape(tpl)
    img = Image(rng.uniform(0, 255, (224, 224)))
    out = map_to_mean_shape(img, mean.flat, mean)
    v = out.mask
    assert v.sum() > 0
    assert np.max(np.abs(out.data[v] - img.data[v])) <= 1e-6


def test_mean_shape_mapping_undoes_affine(tpl):
    mean = default_mean_shape(tpl)
    a = np.array([[0.8, 0.1], [-0.05, 0.9]])
    off = np.array([30.0, 20.0])
    src_pts = mean.points @ a.T + off
    ys, xs = np.mgrid[0:260, 0:260].astype(float)
    img = Image(0.3 * xs + 0.7 * ys + 5)
    out = map_to_mean_shape(img, src_pts.ravel(), mean)
    oy, ox = np.nonzero(out.mask)
    pre = np.c_[ox, oy] @ a.T + off
    expect = 0.3 * pre[:, 0] + 0.7 * pre[:, 1] + 5
    assert np.max(np.abs(out.data[oy, ox] - expect)) <= 1e-6


# end to end -----------------------------------------------------------------


def test_frontal_render_round_trip(tpl):
    img, lm = frontal_render(tpl)
    out = frontalize(img, lm, tpl)
    assert np.max(np.abs(out.transform.matrix - np.eye(4))) <= 1e-6
    crop, _, _ = crop_face(img, lm)
    v = out.density.counts > 0
    assert np.array_equal(out.texture.data[v], crop.data[v])
    assert out.density.flags.sum() == 0
    a, s = out.final["asymmetric"], out.final["symmetric"]
    both = a.mask & s.mask
    assert np.sqrt(np.mean((a.data[both] - s.data[both]) ** 2)) < 5


def test_frontalize_is_deterministic(tpl):
    img, lm = yaw_render(tpl, 30)
    a, b = frontalize(img, lm, tpl), frontalize(img, lm, tpl)
    for mode in ("asymmetric", "symmetric"):
        assert np.array_equal(a.final[mode].data, b.final[mode].data)
    assert a.diagnostics == b.diagnostics


def test_asymmetric_changes_only_flagged_pixels(tpl):
    img, lm = yaw_render(tpl, 30)
    out = frontalize(img, lm, tpl)
    assert out.density.flags.sum() > 0
    changed = out.corrected["asymmetric"].data != out.texture.data
    assert not np.any(changed & ~out.density.flags)


def test_anchor_coordinates_coincide(tpl):
    mean = default_mean_shape(tpl)
    for yaw in (0, 20):
        img, lm = yaw_render(tpl, yaw)
        out = frontalize(img, lm, tpl, mean=mean)
        assert out.final["asymmetric"].shape == mean.shape


def test_stage_tagged_failures(tpl):
    img, lm = frontal_render(tpl)
    bad = lm.copy().reshape(-1, 2)
    bad[0, 0] = -5
    with pytest.raises(StageError) as exc:
        frontalize(img, bad.ravel(), tpl)
    assert exc.value.stage == "landmark-degenerate"
    folded = lm.copy().reshape(-1, 2)
    folded[[36, 45]] = folded[[45, 36]]
    with pytest.raises(StageError) as exc:
        frontalize(img, folded.ravel(), tpl)
    assert exc.value.stage == "fit-failed"
    with pytest.raises(StageError) as exc:
        frontalize(img, lm[:10], tpl)
    assert exc.value.stage == "landmark-degenerate"
