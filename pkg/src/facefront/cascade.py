"""Cascade of mixtures of linear regressors for 2-D landmark localisation.

Each stage extracts HoG features at the current shape estimate, routes
them through a Gaussian-mixture membership function and adds the
membership-weighted sum of the component regressors' predictions to the
shape. Shape updates are expressed in units of the initialisation box so
that one model serves faces of different sizes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .features import FeatureConfig, extract_features
from .geometry import Image
from .gmm import GaussianMixture, gmm_fit, membership


@dataclass(frozen=True, eq=False)
class MixtureStage:
    """One cascade stage: a mixture plus ``C`` regressors of shape (d + 1, 2N)."""

    gmm: GaussianMixture
    regressors: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.regressors, dtype=np.float64)
        if w.ndim != 3 or w.shape[0] != self.gmm.n_components or w.shape[1] != self.gmm.dim + 1:
            raise DimensionError(
                f"regressors {w.shape} incompatible with a {self.gmm.n_components}-component,"
                f" {self.gmm.dim}-dimensional mixture"
            )
        if not np.all(np.isfinite(w)):
            raise ValueError("regressors must be finite")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "regressors", w)

    @property
    def n_outputs(self):
        return self.regressors.shape[2]


@dataclass(frozen=True, eq=False)
class TrainingSample:
    image: Image
    landmarks: np.ndarray
    box: tuple

    def __post_init__(self):
        pts = np.asarray(self.landmarks, dtype=np.float64).reshape(-1, 2)
        h, w = self.image.shape
        if np.any(pts < 0) or np.any(pts[:, 0] > w - 1) or np.any(pts[:, 1] > h - 1):
            raise ValueError("ground-truth landmarks must lie inside the image")
        object.__setattr__(self, "landmarks", pts.ravel())
        object.__setattr__(self, "box", tuple(float(v) for v in self.box))


@dataclass(frozen=True, eq=False)
class CascadeModel:
    stages: tuple
    mean_shape: np.ndarray
    features: FeatureConfig = FeatureConfig()
    training_errors: tuple = field(default=(), repr=False)

    def __post_init__(self):
        stages = tuple(self.stages)
        mean = np.asarray(self.mean_shape, dtype=np.float64).ravel()
        if not stages:
            raise ValueError("a cascade needs at least one stage")
        d = self.features.dim(mean.size // 2)
        for s in stages:
            if s.gmm.dim != d or s.n_outputs != mean.size:
                raise DimensionError("stage dimensions disagree with the mean shape and feature config")
        mean.setflags(write=False)
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "mean_shape", mean)

    @property
    def n_landmarks(self):
        return self.mean_shape.size // 2


def augment(x):
    x = np.atleast_2d(x)
    return np.hstack([x, np.ones((len(x), 1))])


def predict_update(stage, x):
    """Membership-weighted sum of the stage's linear predictions."""
    x = np.asarray(x, dtype=np.float64)
    psi = membership(stage.gmm, x)
    psi = np.atleast_2d(psi)
    xa = augment(x)
    out = sum(psi[:, i, None] * (xa @ stage.regressors[i]) for i in range(psi.shape[1]))
    return out[0] if x.ndim == 1 else out


def landmark_quality(stage, x):
    """Per-landmark confidence from the spread of the component predictions.

    ``1 / (1 + sum_i psi_i * ||p_i - p_mean||^2)`` per landmark, computed in
    box units: 1 when all regressors agree.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    psi = membership(stage.gmm, x)
    preds = np.stack([augment(x)[0] @ w for w in stage.regressors])
    mean = psi @ preds
    spread = psi @ ((preds - mean) ** 2)
    per_landmark = spread.reshape(-1, 2).sum(axis=1)
    return 1.0 / (1.0 + per_landmark)


def _solve_weighted_ridge(xa, y, w, ridge):
    sw = np.sqrt(w)[:, None]
    a, b = sw * xa, sw * y
    n, p = a.shape
    if ridge == 0:
        return np.linalg.lstsq(a, b, rcond=None)[0]
    if p <= n:
        return np.linalg.solve(a.T @ a + ridge * np.eye(p), a.T @ b)
    return a.T @ np.linalg.solve(a @ a.T + ridge * np.eye(n), b)


def train_stage(features, targets, n_components, ridge=1e-3, seed=0):
    """Fit the mixture, then one membership-weighted ridge regressor per component.

    Component ``i`` minimises ``sum_n psi_i(x_n) ||W^T x'_n - y_n||^2 + ridge ||W||_F^2``.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if x.size == 0 or y.size == 0:
        raise ValueError("empty training set")
    if len(x) != len(y):
        raise DimensionError(f"{len(x)} feature vectors but {len(y)} targets")
    gmm = gmm_fit(x, n_components, seed=seed)
    psi = membership(gmm, x)
    xa = augment(x)
    regs = np.stack([_solve_weighted_ridge(xa, y, psi[:, i], ridge) for i in range(gmm.n_components)])
    return MixtureStage(gmm, regs)


# ---------------------------------------------------------------------------
# shape frames


def box_of(shape):
    pts = np.asarray(shape, dtype=np.float64).reshape(-1, 2)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return (lo[0], lo[1], hi[0] - lo[0], hi[1] - lo[1])


def place_in_box(unit_shape, box):
    x, y, w, h = box
    pts = np.asarray(unit_shape, dtype=np.float64).reshape(-1, 2)
    return (pts * [w, h] + [x, y]).ravel()


def _box_scale(box, n):
    return np.tile([box[2], box[3]], n)


def procrustes_mean(shapes, iterations=10):
    """Generalised Procrustes mean, returned normalised to its own bounding box."""
    pts = [np.asarray(s, dtype=np.float64).reshape(-1, 2) for s in shapes]
    pts = [p - p.mean(axis=0) for p in pts]
    pts = [p / np.linalg.norm(p) for p in pts]
    mean = pts[0]
    for _ in range(iterations):
        aligned = []
        for p in pts:
            u, _, vt = np.linalg.svd(p.T @ mean)
            r = u @ vt
            if np.linalg.det(r) < 0:
                u[:, -1] *= -1
                r = u @ vt
            aligned.append(p @ r)
        new = np.mean(aligned, axis=0)
        new /= np.linalg.norm(new)
        if np.allclose(new, mean, atol=1e-12):
            mean = new
            break
        mean = new
    lo, hi = mean.min(axis=0), mean.max(axis=0)
    return ((mean - lo) / (hi - lo)).ravel()


def normalised_error(pred, truth):
    """Mean point-to-point error over inter-ocular distance (bbox diagonal if not 68 points)."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    t = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    diag = np.linalg.norm(t.max(axis=0) - t.min(axis=0))
    norm = diag
    if len(t) == 68:
        iod = np.linalg.norm(t[36:42].mean(axis=0) - t[42:48].mean(axis=0))
        # eyes can coincide in a full profile view
        norm = iod if iod > 1e-6 * diag else diag
    return float(np.mean(np.linalg.norm(p - t, axis=1)) / norm)


# ---------------------------------------------------------------------------
# inference


def _check_box(image, box):
    x, y, w, h = box
    if w <= 0 or h <= 0:
        raise ValueError("initialisation box must have positive size")
    if x < 0 or y < 0 or x + w > image.width or y + h > image.height:
        raise ValueError(f"initialisation box {tuple(box)} outside the {image.width}x{image.height} image")


def cascade_trajectory(model, image, box):
    """Shapes ``S_0 .. S_T`` visited by the cascade, plus final-stage quality."""
    _check_box(image, box)
    n = model.n_landmarks
    scale = _box_scale(box, n)
    shape = place_in_box(model.mean_shape, box)
    traj = [shape]
    quality = None
    for stage in model.stages:
        x = extract_features(image, shape, model.features)
        if x.size != stage.gmm.dim:
            raise DimensionError("model feature dimension does not match the extracted features")
        quality = landmark_quality(stage, x)
        shape = shape + predict_update(stage, x) * scale
        traj.append(shape)
    return traj, quality


def feature_log_likelihood(model, image, shape):
    """Per-dimension log-likelihood of the features at ``shape`` under the last stage's mixture.

    Low values mean the image looks unlike anything the final stage was
    trained on.
    """
    x = extract_features(image, shape, model.features)
    gmm = model.stages[-1].gmm
    return gmm.log_likelihood(x) / gmm.dim


def run_cascade(model, image, box, return_quality=False):
    traj, quality = cascade_trajectory(model, image, box)
    return (traj[-1], quality) if return_quality else traj[-1]


# ---------------------------------------------------------------------------
# training


def perturbed_boxes(box, count, scale_jitter, shift_jitter, rng):
    if count == 0:
        return [tuple(box)]
    x, y, w, h = box
    out = []
    for _ in range(count):
        s = 1.0 + rng.uniform(-scale_jitter, scale_jitter)
        dx, dy = rng.uniform(-shift_jitter, shift_jitter, size=2) * [w, h]
        nw, nh = w * s, h * s
        out.append((x + (w - nw) / 2 + dx, y + (h - nh) / 2 + dy, nw, nh))
    return out


def train_cascade(samples, n_stages=5, n_components=3, ridge=1e-3, perturbations=10, seed=0,
                  features=FeatureConfig(), scale_jitter=0.05, shift_jitter=0.05, log=None):
    """Train a cascade stage by stage on the residuals of the previous stages.

    Each sample contributes ``perturbations`` jittered initialisation boxes
    (or its own box when zero). ``training_errors`` on the returned model
    holds the mean normalised error at stages 0..T.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no training samples")
    if n_stages < 1 or n_components < 1:
        raise ValueError("n_stages and n_components must be >= 1")
    rng = np.random.default_rng(seed)
    mean = procrustes_mean([s.landmarks for s in samples])
    n = mean.size // 2

    images, truths, scales, shapes = [], [], [], []
    for s in samples:
        for b in perturbed_boxes(s.box, perturbations, scale_jitter, shift_jitter, rng):
            images.append(s.image)
            truths.append(s.landmarks)
            scales.append(_box_scale(b, n))
            shapes.append(place_in_box(mean, b))
    truths, scales, shapes = np.array(truths), np.array(scales), np.array(shapes)

    def error():
        return float(np.mean([normalised_error(p, t) for p, t in zip(shapes, truths)]))

    errors = [error()]
    stages = []
    for t in range(n_stages):
        x = np.stack([extract_features(img, s, features) for img, s in zip(images, shapes)])
        stage = train_stage(x, (truths - shapes) / scales, n_components, ridge, seed=seed + 1000 * (t + 1))
        shapes = shapes + predict_update(stage, x) * scales
        stages.append(stage)
        errors.append(error())
        if log:
            log(t + 1, errors[-1])
    return CascadeModel(tuple(stages), mean, features, tuple(errors))
