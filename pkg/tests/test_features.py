import numpy as np
import pytest

from facefront.errors import DimensionError
from facefront.features import FeatureConfig, extract_features, orientation_histograms
from facefront.geometry import Image


def test_dimension_is_function_of_config():
    cfg = FeatureConfig(patch_size=8, cells=2, bins=6)
    img = Image(np.random.default_rng(0).uniform(size=(40, 40)))
    x = extract_features(img, [10, 10, 20, 25, 30, 5], cfg)
    assert x.shape == (3 * 2 * 2 * 6,)
    assert cfg.dim(3) == x.size


def test_constant_image_gives_zero_descriptor():
    img = Image(np.full((50, 50), 128.0))
    x = extract_features(img, np.array([25.0, 25.0, 10.0, 40.0]))
    assert x.shape == (2 * 4 * 4 * 9,)
    assert np.all(x == 0)


def test_vertical_step_edge_votes_horizontal_gradient_bin():
    # Hand oracle: patch_size 2 samples columns 3..6 = (0, 0, 100, 100); both
    # inner central differences are gx = 100, gy = 0, so all magnitude lands in
    # the bin containing angle 0.
    data = np.zeros((9, 9))
    data[:, 5:] = 100.0
    cfg = FeatureConfig(patch_size=2, cells=1, bins=9)
    hist = extract_features(Image(data), [4.5, 4.5], cfg).reshape(9)
    assert hist[0] == pytest.approx(1.0)
    assert np.all(hist[1:] == 0)

    patch = np.array([[0, 0, 100, 100]] * 4, float)[None]
    raw = orientation_histograms(patch, cfg)[0, 0, 0]
    gx = 100.0 - 0.0
    assert raw[0] == pytest.approx(4 * gx)


def test_landmark_order_permutes_blocks():
    rng = np.random.default_rng(3)
    img = Image(rng.uniform(0, 255, size=(64, 64)))
    cfg = FeatureConfig(patch_size=8, cells=2, bins=9)
    pts = rng.uniform(5, 58, size=(4, 2))
    perm = [2, 0, 3, 1]
    a = extract_features(img, pts.ravel(), cfg).reshape(4, -1)
    b = extract_features(img, pts[perm].ravel(), cfg).reshape(4, -1)
    assert np.array_equal(a[perm], b)


def test_blocks_are_unit_norm_and_border_clamped():
    rng = np.random.default_rng(4)
    img = Image(rng.uniform(0, 255, size=(30, 30)))
    x = extract_features(img, [0.0, 0.0, 29.0, 29.0, -5.0, 40.0]).reshape(3, -1)
    assert np.allclose(np.linalg.norm(x[:2], axis=1), 1.0)
    assert np.all(np.isfinite(x))


def test_bad_inputs():
    img = Image(np.zeros((10, 10)))
    with pytest.raises(DimensionError):
        extract_features(img, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        FeatureConfig(patch_size=10, cells=3)
