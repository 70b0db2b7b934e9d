"""Synthetic annotated faces: the template rendered under random pose and affine jitter."""
from __future__ import annotations

import math

import numpy as np

from .cascade import TrainingSample, box_of
from .geometry import Image
from .template import project_landmarks, render_face


def _affine(rng, scale_range, roll_deg, shear, aspect):
    s = rng.uniform(*scale_range)
    a = math.radians(rng.uniform(-roll_deg, roll_deg))
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    sh = np.array([[1.0, rng.uniform(-shear, shear)], [0.0, 1.0]])
    asp = np.diag([1.0 + rng.uniform(-aspect, aspect), 1.0])
    return s * rot @ sh @ asp


def synthetic_face(template, rng, canvas=(160, 160), yaw_range=(-20.0, 20.0), scale_range=(0.9, 1.1),
                   roll_deg=8.0, shear=0.05, aspect=0.05, noise=3.0, yaw=None):
    """One rendered face with ground-truth landmarks and a tight landmark box."""
    lin = _affine(rng, scale_range, roll_deg, shear, aspect)
    yaw = rng.uniform(*yaw_range) if yaw is None else float(yaw)
    gain, bias = rng.uniform(0.85, 1.15), rng.uniform(-15, 15)
    # place the landmark bounding box at a random position with a margin
    pts = project_landmarks(template, yaw, lin).reshape(-1, 2)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    h, w = canvas
    margin = 0.2 * (hi - lo)
    room_lo = margin - lo
    room_hi = np.array([w - 1, h - 1]) - margin - hi
    off = np.where(room_hi > room_lo, rng.uniform(room_lo, np.maximum(room_hi, room_lo)),
                   (room_lo + room_hi) / 2)
    img, lm = render_face(template, yaw, lin, off, canvas=canvas, gain=gain, bias=bias)
    data = img.data + rng.normal(0.0, noise, img.shape) if noise > 0 else img.data
    image = Image(np.clip(data, 0, 255))
    return TrainingSample(image, lm, box_of(lm))


def synthetic_corpus(template, n, seed=0, **kwargs):
    rng = np.random.default_rng(seed)
    return [synthetic_face(template, rng, **kwargs) for _ in range(n)]
