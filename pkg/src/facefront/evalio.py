"""File formats for descriptors, tracks, score matrices, curves and yield tables.

FVEC descriptor container (little-endian)::

    b"FVEC"  uint32 version (1)  uint32 dim  uint32 count
    int32[count]          frame indices
    float32[count * dim]  descriptors, row-major
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .evaluation import FrameDescriptor, ScoreMatrix, Track

FVEC_MAGIC = b"FVEC"
FVEC_VERSION = 1


def write_fvec(path, frames):
    frames = list(frames)
    dim = np.asarray(frames[0].vector).size if frames else 0
    idx = np.array([f.frame for f in frames], dtype="<i4")
    data = np.array([np.asarray(f.vector, dtype=np.float64).ravel() for f in frames], dtype="<f4")
    if frames and data.shape != (len(frames), dim):
        raise DataError("frame descriptors differ in dimension")
    head = FVEC_MAGIC + struct.pack("<3I", FVEC_VERSION, dim, len(frames))
    Path(path).write_bytes(head + idx.tobytes() + data.tobytes())


def read_fvec(path):
    buf = Path(path).read_bytes()
    if buf[:4] != FVEC_MAGIC:
        raise DataError(f"{path}: not an FVEC file")
    if len(buf) < 16:
        raise DataError(f"{path}: truncated FVEC header")
    version, dim, count = struct.unpack_from("<3I", buf, 4)
    if version != FVEC_VERSION:
        raise DataError(f"{path}: unsupported FVEC version {version}")
    need = 16 + 4 * count + 4 * count * dim
    if len(buf) != need:
        raise DataError(f"{path}: expected {need} bytes, found {len(buf)}")
    idx = np.frombuffer(buf, "<i4", count, 16)
    data = np.frombuffer(buf, "<f4", count * dim, 16 + 4 * count).reshape(count, dim)
    return [FrameDescriptor(data[i].astype(np.float64), int(idx[i])) for i in range(count)]


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: unreadable CSV ({exc})") from exc
    if not rows:
        raise DataError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def _floats(path, values):
    try:
        return [float(v) for v in values]
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value ({exc})") from exc


def read_descriptor_csv(path):
    """CSV with a header row; first column is the frame index, the rest the vector."""
    header, rows = _read_rows(path)
    if header[0].strip().lower() != "frame" or len(header) < 2:
        raise DataError(f"{path}: header must start with 'frame' followed by vector columns")
    out = []
    for r in rows:
        if len(r) != len(header):
            raise DataError(f"{path}: row has {len(r)} fields, header has {len(header)}")
        vals = _floats(path, r)
        out.append(FrameDescriptor(np.array(vals[1:]), int(vals[0])))
    return out


def read_descriptors(path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_descriptor_csv(path)
    return read_fvec(path)


def read_track(path, subject="", video=""):
    """Track CSV with header ``frame,x,y``."""
    header, rows = _read_rows(path)
    if [h.strip().lower() for h in header] != ["frame", "x", "y"]:
        raise DataError(f"{path}: track header must be frame,x,y")
    vals = np.array([_floats(path, r) for r in rows]).reshape(-1, 3)
    try:
        return Track(vals[:, 0].astype(np.int64), vals[:, 1:], subject, video)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def read_labels(path):
    """Video list CSV: ``video,subject,descriptors[,track][,role]``.

    Paths are resolved relative to the labels file. ``role`` is one of
    ``gallery``, ``probe`` or ``both`` (default).
    """
    path = Path(path)
    header, rows = _read_rows(path)
    cols = [h.strip().lower() for h in header]
    for need in ("video", "subject", "descriptors"):
        if need not in cols:
            raise DataError(f"{path}: missing column {need!r}")
    out = []
    for r in rows:
        if len(r) != len(cols):
            raise DataError(f"{path}: row {r!r} does not match the header")
        rec = dict(zip(cols, (v.strip() for v in r)))
        rec["descriptors"] = path.parent / rec["descriptors"]
        rec["track"] = path.parent / rec["track"] if rec.get("track") else None
        rec["role"] = rec.get("role") or "both"
        if rec["role"] not in ("gallery", "probe", "both"):
            raise DataError(f"{path}: unknown role {rec['role']!r}")
        out.append(rec)
    return out


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_scores(path, m):
    """Matrix CSV: gallery ids down, probe ids across; a second file carries the labels."""
    _write(path, ["gallery"] + list(m.probes),
           [[g] + [repr(float(s)) for s in row] for g, row in zip(m.gallery, m.scores)])


def write_pair_labels(path, m):
    rows = []
    for i, g in enumerate(m.gallery):
        for j, p in enumerate(m.probes):
            rows.append([g, p, int(m.genuine[i, j]), int(m.valid[i, j])])
    _write(path, ["gallery", "probe", "genuine", "valid"], rows)


def read_scores(path):
    header, rows = _read_rows(path)
    probes = tuple(header[1:])
    gallery = tuple(r[0] for r in rows)
    scores = np.array([_floats(path, r[1:]) for r in rows]).reshape(len(gallery), len(probes))
    return gallery, probes, scores


def read_pair_labels(path, gallery, probes):
    _, rows = _read_rows(path)
    gi = {g: i for i, g in enumerate(gallery)}
    pi = {p: j for j, p in enumerate(probes)}
    gen = np.zeros((len(gallery), len(probes)), bool)
    valid = np.zeros_like(gen)
    for g, p, a, b in rows:
        gen[gi[g], pi[p]] = a == "1"
        valid[gi[g], pi[p]] = b == "1"
    return gen, valid


def load_score_matrix(scores_path, labels_path):
    gallery, probes, s = read_scores(scores_path)
    gen, valid = read_pair_labels(labels_path, gallery, probes)
    return ScoreMatrix(gallery, probes, s, gen, valid)


def write_roc(path, roc):
    _write(path, ["threshold", "far", "vr"],
           [[repr(float(t)), repr(float(f)), repr(float(v))] for t, f, v in zip(roc.thresholds, roc.far, roc.vr)])


def read_roc(path):
    _, rows = _read_rows(path)
    return np.array([_floats(path, r) for r in rows]).reshape(-1, 3)


def write_cmc(path, cmc):
    _write(path, ["rank", "rate"], [[r + 1, repr(float(v))] for r, v in enumerate(cmc)])


def read_cmc(path):
    _, rows = _read_rows(path)
    return np.array([float(r[1]) for r in rows])


def _pct(rate):
    return "" if rate is None else f"{100 * float(rate):.2f}"


def write_yield_table(path, report):
    """Methods as columns; attempted, succeeded and yield-percent rows."""
    att = [report.overall(m)[0] for m in report.methods]
    suc = [report.overall(m)[1] for m in report.methods]
    pct = [_pct(s / a if a else None) for a, s in zip(att, suc)]
    _write(path, ["row"] + list(report.methods),
           [["attempted"] + att, ["succeeded"] + suc, ["yield_percent"] + pct])


def write_yield_bins(path, report):
    """One row per pose bin, one yield-percent column per method."""
    rows = [[b] + [_pct(report.rate(m, b)) for m in report.methods] for b in report.bins]
    _write(path, ["pose_deg"] + list(report.methods), rows)
