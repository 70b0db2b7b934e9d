"""Batch-level helpers shared by the command line and the yield sweep."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cascade import box_of, cascade_trajectory, feature_log_likelihood, perturbed_boxes
from .errors import StageError
from .evaluation import yield_report
from .frontalizer import LANDMARK_DEGENERATE, default_mean_shape, frontalize
from .geometry import mesh_coverage
from .synthetic import synthetic_face

GT_METHOD = "GT & OFM"
CMR_METHOD = "CMR & OFM"


class Frontalizer:
    """Frontalization bound to one template, with the mean shape and hull precomputed."""

    def __init__(self, template, config):
        self.template = template
        self.config = config
        self.mean = default_mean_shape(template, config.resolution)
        self.hull = mesh_coverage(template.mesh, template.shape) > 0

    def __call__(self, image, landmarks, quality=None):
        return frontalize(image, landmarks, self.template, self.config, quality, self.mean, self.hull)


def clip_box(box, shape):
    x, y, w, h = box
    ih, iw = shape
    x0, y0 = max(0.0, x), max(0.0, y)
    x1, y1 = min(float(iw), x + w), min(float(ih), y + h)
    return (x0, y0, x1 - x0, y1 - y0)


def landmark_with_cascade(model, image, box, min_loglik=None):
    """Cascade landmarks and per-landmark quality.

    Box problems become stage failures, as do fits whose final features
    score below ``min_loglik`` (per dimension) under the last stage's
    mixture. Returns ``(landmarks, quality, loglik)``.
    """
    try:
        traj, quality = cascade_trajectory(model, image, clip_box(box, image.shape))
    except ValueError as exc:
        raise StageError(LANDMARK_DEGENERATE, str(exc)) from exc
    ll = feature_log_likelihood(model, image, traj[-2])
    if min_loglik is not None and ll < min_loglik:
        raise StageError(LANDMARK_DEGENERATE, f"landmark fit rejected: feature log-likelihood {ll:.3g} per dim")
    return traj[-1], quality, ll


@dataclass(frozen=True)
class SweepOutcome:
    method: str
    yaw: int
    sample: int
    success: bool
    stage: str


def yield_sweep(template, model, config, seed=0):
    """Render the template at every configured yaw (both signs) and try both pipelines.

    Each rendering gets its own random stream so results do not depend on
    the order of evaluation. Returns the outcome list and the yield report.
    """
    front = Frontalizer(template, config.frontalizer)
    sw = config.sweep
    outcomes = []
    for b in sw.bins:
        for sign in ((1,) if b == 0 else (1, -1)):
            for k in range(sw.samples_per_bin):
                rng = np.random.default_rng([seed, b, 1 if sign > 0 else 0, k])
                s = synthetic_face(template, rng, canvas=(sw.canvas, sw.canvas), yaw=sign * b, noise=2.0)
                box = perturbed_boxes(box_of(s.landmarks), 1, 0.05, 0.05, rng)[0]
                runs = [(GT_METHOD, lambda s=s: (s.landmarks, None, None))]
                if model is not None:
                    runs.append((CMR_METHOD, lambda s=s, box=box: landmark_with_cascade(
                        model, s.image, box, config.landmarker.min_loglik_per_dim)))
                for method, landmarker in runs:
                    try:
                        lm, q, _ = landmarker()
                        front(s.image, lm, q)
                        outcomes.append(SweepOutcome(method, sign * b, k, True, ""))
                    except StageError as exc:
                        outcomes.append(SweepOutcome(method, sign * b, k, False, exc.stage))
    order = [CMR_METHOD, GT_METHOD]
    outcomes.sort(key=lambda o: (order.index(o.method), abs(o.yaw), o.yaw < 0, o.sample))
    report = yield_report([(o.method, o.yaw, o.success) for o in outcomes], sw.bins)
    return outcomes, report
