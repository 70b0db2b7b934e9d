"""Video-to-video matching evaluation.

Detection tracks are cleaned of outliers, per-frame descriptors are
averaged into one vector per video, videos are compared by cosine
similarity, and the resulting score matrix is summarised as ROC and CMC
curves. Pre-processing yield is tallied per method and pose bin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DataError, DimensionError

POSE_BINS = (0, 15, 30, 40, 60, 70, 90)


@dataclass(frozen=True, eq=False)
class Track:
    frames: np.ndarray
    centres: np.ndarray
    subject: str = ""
    video: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.int64).ravel()
        c = np.asarray(self.centres, dtype=np.float64).reshape(-1, 2)
        if len(f) != len(c):
            raise DimensionError("one centre per frame is required")
        if np.any(np.diff(f) <= 0):
            raise ValueError("track frame indices must be strictly increasing")
        if not np.all(np.isfinite(c)):
            raise ValueError("track centres must be finite")
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "centres", c)

    def __len__(self):
        return len(self.frames)

    def subset(self, keep):
        return Track(self.frames[keep], self.centres[keep], self.subject, self.video)


@dataclass(frozen=True, eq=False)
class FrameDescriptor:
    vector: np.ndarray
    frame: int = 0


@dataclass(frozen=True, eq=False)
class VideoDescriptor:
    vector: np.ndarray
    count: int = 1
    video: str = ""
    subject: str = ""


def track_deviations(track, window=5):
    """Distance of each detection from the mean of its temporal neighbours.

    Neighbours are the detections within ``window // 2`` positions on either
    side, excluding the detection itself.
    """
    n = len(track)
    half = window // 2
    out = np.empty(n)
    for i in range(n):
        idx = [j for j in range(max(0, i - half), min(n, i + half + 1)) if j != i]
        out[i] = np.linalg.norm(track.centres[i] - track.centres[idx].mean(axis=0))
    return out


def filter_track(track, k=2.5, window=5):
    """Drop detections whose deviation lies more than ``k`` std-devs above the mean deviation.

    Single pass. Tracks of two or fewer detections are returned unchanged.
    Raises :class:`DataError` if more than half the detections would go.
    """
    n = len(track)
    if n == 0:
        raise ValueError("empty track")
    if n <= 2:
        return track
    d = track_deviations(track, window)
    sigma = d.std()
    remove = (d - d.mean()) > k * sigma
    if remove.sum() > math.ceil(n / 2):
        raise DataError(f"track filter would remove {int(remove.sum())} of {n} detections")
    return track.subset(~remove)


def accumulate(frames, video="", subject=""):
    """Per-dimension mean of frame descriptors, summed in frame order."""
    frames = list(frames)
    if not frames:
        raise ValueError("cannot accumulate an empty frame list")
    order = sorted(range(len(frames)), key=lambda i: frames[i].frame)
    idx = [frames[i].frame for i in order]
    if len(set(idx)) != len(idx):
        raise ValueError("duplicate frame indices")
    vecs = [np.asarray(frames[i].vector, dtype=np.float64).ravel() for i in order]
    dim = vecs[0].size
    if any(v.size != dim for v in vecs):
        raise DimensionError("frame descriptors differ in dimension")
    total = np.zeros(dim)
    for v in vecs:
        total += v
    return VideoDescriptor(total / len(vecs), len(vecs), video, subject)


def _vec(a):
    return np.asarray(a.vector if isinstance(a, VideoDescriptor) else a, dtype=np.float64).ravel()


def cosine_score(a, b):
    a, b = _vec(a), _vec(b)
    if a.size != b.size:
        raise DimensionError("descriptors differ in dimension")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("zero-norm descriptor")
    return float(min(1.0, max(-1.0, np.dot(a, b) / (na * nb))))


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Gallery rows by probe columns."""

    gallery: tuple
    probes: tuple
    scores: np.ndarray
    genuine: np.ndarray
    valid: np.ndarray


def score_all(gallery, probes, exclude_same_video=True):
    """Dense cosine scores with same-subject labels.

    With ``exclude_same_video`` a gallery/probe pair drawn from the same
    video is marked invalid and ignored by the curves.
    """
    gallery, probes = list(gallery), list(probes)
    if not gallery or not probes:
        raise ValueError("gallery and probe sets must be non-empty")
    s = np.array([[cosine_score(g, p) for p in probes] for g in gallery])
    gen = np.array([[g.subject == p.subject for p in probes] for g in gallery], dtype=bool)
    valid = np.ones_like(gen)
    if exclude_same_video:
        valid = np.array([[not (g.video and g.video == p.video) for p in probes] for g in gallery],
                         dtype=bool)
    return ScoreMatrix(tuple(g.video for g in gallery), tuple(p.video for p in probes), s, gen, valid)


@dataclass(frozen=True, eq=False)
class RocCurve:
    thresholds: np.ndarray
    far: np.ndarray
    vr: np.ndarray

    def points(self):
        return list(zip(self.far.tolist(), self.vr.tolist()))


def roc_curve(m):
    """FAR/VR at +inf and then at every distinct score, accepting score >= threshold."""
    gen = np.sort(m.scores[m.valid & m.genuine])
    imp = np.sort(m.scores[m.valid & ~m.genuine])
    if gen.size == 0 or imp.size == 0:
        raise ValueError("ROC needs at least one genuine and one impostor pair")
    thr = np.unique(np.r_[gen, imp])[::-1]
    n_gen = gen.size - np.searchsorted(gen, thr, side="left")
    n_imp = imp.size - np.searchsorted(imp, thr, side="left")
    thresholds = np.r_[np.inf, thr]
    far = np.r_[0.0, n_imp / imp.size]
    vr = np.r_[0.0, n_gen / gen.size]
    return RocCurve(thresholds, far, vr)


def probe_ranks(m):
    """Rank of each probe's best genuine score; equal-scored impostors rank ahead."""
    ranks = []
    for j in range(m.scores.shape[1]):
        v = m.valid[:, j]
        col, gen = m.scores[v, j], m.genuine[v, j]
        if not gen.any():
            raise ValueError(f"probe {j} has no genuine gallery entry")
        best = col[gen].max()
        ranks.append(1 + int(np.sum(col[~gen] >= best)))
    return np.array(ranks)


def cmc_curve(m):
    ranks = probe_ranks(m)
    g = m.scores.shape[0]
    return np.array([np.mean(ranks <= r) for r in range(1, g + 1)])


@dataclass(frozen=True)
class YieldReport:
    """Attempted and succeeded counts keyed by (method, bin)."""

    methods: tuple
    bins: tuple
    counts: dict

    def rate(self, method, b):
        a, s = self.counts.get((method, b), (0, 0))
        return Fraction(s, a) if a else None

    def overall(self, method):
        a = sum(self.counts.get((method, b), (0, 0))[0] for b in self.bins)
        s = sum(self.counts.get((method, b), (0, 0))[1] for b in self.bins)
        return a, s


def yield_report(outcomes, bins=POSE_BINS):
    """Tally (method, pose_bin, success) outcomes; negative bins merge with positive ones."""
    allowed = set(bins)
    counts, methods = {}, []
    for method, label, ok in outcomes:
        b = abs(int(label))
        if b not in allowed or b != abs(label):
            raise ValueError(f"unknown pose bin {label!r}")
        if method not in methods:
            methods.append(method)
        a, s = counts.get((method, b), (0, 0))
        counts[(method, b)] = (a + 1, s + int(bool(ok)))
    return YieldReport(tuple(methods), tuple(bins), counts)
