"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error. Batch commands record
per-item failures and carry on. Every artefact is a deterministic function
of the inputs and the configuration; wall-clock timings are written to a
separate ``timings.json`` so the other files are byte-stable across runs.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import TrainingSample, box_of, train_cascade
from .config import load_config
from .errors import DataError, FacefrontError, StageError
from .evalio import (
    read_descriptors,
    read_labels,
    read_track,
    write_cmc,
    write_pair_labels,
    write_roc,
    write_scores,
    write_yield_bins,
    write_yield_table,
)
from .evaluation import accumulate, cmc_curve, filter_track, roc_curve, score_all
from .frontalizer import LANDMARK_DEGENERATE
from .imfiles import image_files, read_gray, write_gray
from .modelio import load_model, model_summary, model_to_json, read_landmarks, save_model, write_landmarks
from .pipeline import Frontalizer, landmark_with_cascade, yield_sweep
from .synthetic import synthetic_corpus
from .template import default_template, load_template

log = logging.getLogger("facefront")

READ_FAILED = "read-failed"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_box(path, shape):
    """Sidecar ``x y w h`` box, or the whole image when absent."""
    if not path.exists():
        return (0.0, 0.0, float(shape[1]), float(shape[0]))
    try:
        vals = [float(v) for v in path.read_text().split()]
    except ValueError as exc:
        raise DataError(f"{path}: malformed box file") from exc
    if len(vals) != 4:
        raise DataError(f"{path}: expected 'x y w h'")
    return tuple(vals)


def _write_box(path, box):
    path.write_text(" ".join(repr(float(v)) for v in box) + "\n")


def _template(args):
    return load_template(args.template) if args.template else default_template()


def _manifest(config, command, items):
    counts = {"attempted": len(items), "succeeded": sum(1 for i in items if i["status"] == "ok")}
    failures = {}
    for i in items:
        if i["status"] != "ok":
            failures[i["stage"]] = failures.get(i["stage"], 0) + 1
    counts["failures"] = failures
    assert counts["attempted"] == counts["succeeded"] + sum(failures.values())
    return {
        "tool": "facefront",
        "version": __version__,
        "command": command,
        "config": config.to_dict(),
        "counts": counts,
        "items": items,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_make_synthetic(args, config):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tpl = _template(args)
    samples = synthetic_corpus(tpl, args.count, seed=config.seed, yaw_range=(-args.max_yaw, args.max_yaw),
                               canvas=(args.canvas, args.canvas))
    rng = np.random.default_rng([config.seed, 1])
    for k, s in enumerate(samples):
        stem = out / f"face_{k:04d}"
        write_gray(stem.with_suffix(".png"), s.image)
        write_landmarks(stem.with_suffix(".pts"), s.landmarks)
        # loose detector-style box around the landmarks
        x, y, w, h = box_of(s.landmarks)
        dx, dy = rng.uniform(-0.05, 0.05, 2) * [w, h]
        grow = 1.0 + rng.uniform(0.0, 0.1)
        nw, nh = w * grow, h * grow
        box = (max(0.0, x + dx - (nw - w) / 2), max(0.0, y + dy - (nh - h) / 2), nw, nh)
        box = (box[0], box[1], min(box[2], s.image.width - box[0]), min(box[3], s.image.height - box[1]))
        _write_box(stem.with_suffix(".box"), box)
    print(f"wrote {len(samples)} synthetic faces to {out}")
    return 0


def _training_pairs(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    samples, problems = [], []
    for img_path in image_files(directory):
        pts = img_path.with_suffix(".pts")
        if not pts.exists():
            problems.append(f"{img_path.name}: no .pts annotation")
            continue
        try:
            image = read_gray(img_path)
            lm = read_landmarks(pts)
            box = _read_box(img_path.with_suffix(".box"), image.shape)
            samples.append(TrainingSample(image, lm, box))
        except (DataError, ValueError) as exc:
            problems.append(f"{img_path.name}: {exc}")
    return samples, problems


def cmd_train_landmarker(args, config):
    samples, problems = _training_pairs(args.data)
    for p in problems:
        print(f"skipped {p}", file=sys.stderr)
    if not samples:
        raise DataError(f"{args.data}: no valid image/annotation pairs")
    lc = config.landmarker
    model = train_cascade(samples, lc.stages, lc.components, lc.ridge, lc.perturbations, config.seed,
                          lc.features(), lc.scale_jitter, lc.shift_jitter,
                          log=lambda t, e: log.info("stage %d: mean error %.6g", t, e))
    out = Path(args.out)
    tmp = out.with_name(out.name + ".tmp")
    save_model(model, tmp)
    tmp.replace(out)
    print("stage\tmean_normalised_error")
    for t, e in enumerate(model.training_errors):
        print(f"{t}\t{e:.9e}")
    print(f"trained on {len(samples)} samples; model written to {out}")
    return 0


def _open_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    return image_files(directory)


def cmd_landmark(args, config):
    model = load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = []
    for path in _open_images(args.images):
        item = {"image": path.name}
        try:
            image = read_gray(path)
            box = _read_box(path.with_suffix(".box"), image.shape)
            lm, q, ll = landmark_with_cascade(model, image, box, config.landmarker.min_loglik_per_dim)
            write_landmarks(out / (path.stem + ".pts"), lm)
            item.update(status="ok", quality=[round(float(v), 9) for v in q], loglik_per_dim=float(ll))
        except DataError as exc:
            item.update(status="failed", stage=READ_FAILED, error=str(exc))
        except StageError as exc:
            item.update(status="failed", stage=exc.stage, error=str(exc))
        items.append(item)
    manifest = _manifest(config, "landmark", items)
    _dump_json(out / "manifest.json", manifest)
    c = manifest["counts"]
    print(f"landmarked {c['succeeded']}/{c['attempted']} images")
    return 0


def cmd_frontalize(args, config):
    tpl = _template(args)
    model = load_model(args.model) if args.model else None
    front = Frontalizer(tpl, config.frontalizer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items, timings = [], {}
    for path in _open_images(args.images):
        item = {"image": path.name}
        t0 = time.perf_counter()
        stage_times = {}
        try:
            image = read_gray(path)
            pts = path.with_suffix(".pts")
            t1 = time.perf_counter()
            if pts.exists():
                lm, q, source = read_landmarks(pts), None, "annotation"
            elif model is not None:
                box = _read_box(path.with_suffix(".box"), image.shape)
                lm, q, _ = landmark_with_cascade(model, image, box, config.landmarker.min_loglik_per_dim)
                source = "cascade"
            else:
                raise StageError(LANDMARK_DEGENERATE, "no landmark file and no model given")
            stage_times["landmarks"] = time.perf_counter() - t1
            t1 = time.perf_counter()
            res = front(image, lm, q)
            stage_times["frontalize"] = time.perf_counter() - t1
            for mode, tag in (("asymmetric", "asym"), ("symmetric", "sym")):
                write_gray(out / f"{path.stem}_{tag}.png", res.final[mode], background=0)
            item.update(status="ok", landmarks=source)
            _dump_json(out / f"{path.stem}.json", {"image": path.name, "status": "ok", "landmarks": source,
                                                     **res.diagnostics})
        except DataError as exc:
            item.update(status="failed", stage=READ_FAILED, error=str(exc))
        except StageError as exc:
            item.update(status="failed", stage=exc.stage, error=str(exc))
            _dump_json(out / f"{path.stem}.json", {"image": path.name, "status": "failed",
                                                     "stage": exc.stage, "error": str(exc)})
        stage_times["total"] = time.perf_counter() - t0
        timings[path.name] = stage_times
        items.append(item)
    manifest = _manifest(config, "frontalize", items)
    _dump_json(out / "manifest.json", manifest)
    _dump_json(out / "timings.json", timings)
    c = manifest["counts"]
    print(f"frontalized {c['succeeded']}/{c['attempted']} images")
    for stage, n in sorted(c["failures"].items()):
        print(f"  {stage}: {n}")
    return 0


def cmd_evaluate(args, config):
    ec = config.evaluation
    records = read_labels(args.labels)
    problems = []
    seen = set()
    videos = []
    for rec in records:
        if rec["video"] in seen:
            problems.append(f"duplicate video id {rec['video']!r}")
            continue
        seen.add(rec["video"])
        try:
            if not rec["descriptors"].exists():
                raise DataError(f"descriptor file {rec['descriptors']} not found")
            frames = read_descriptors(rec["descriptors"])
            if rec["track"] is not None:
                track = filter_track(read_track(rec["track"], rec["subject"], rec["video"]), ec.sigma_k, ec.window)
                keep = set(track.frames.tolist())
                frames = [f for f in frames if f.frame in keep]
            if not frames:
                raise DataError("no frames left to accumulate")
            d = accumulate(frames, rec["video"], rec["subject"])
            videos.append((rec["role"], d))
        except (DataError, ValueError) as exc:
            problems.append(f"video {rec['video']!r}: {exc}")
    if problems:
        raise DataError("label/descriptor problems:\n  " + "\n  ".join(problems))
    if len(videos) < 2:
        raise DataError("evaluation needs at least 2 videos")
    gallery = [d for role, d in videos if role in ("gallery", "both")]
    probes = [d for role, d in videos if role in ("probe", "both")]
    try:
        m = score_all(gallery, probes, ec.exclude_same_video)
        roc, cmc = roc_curve(m), cmc_curve(m)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_scores(out / "scores.csv", m)
    write_pair_labels(out / "pairs.csv", m)
    write_roc(out / "roc.csv", roc)
    write_cmc(out / "cmc.csv", cmc)
    _dump_json(out / "summary.json", {
        "gallery": len(gallery), "probes": len(probes), "rank1": float(cmc[0]),
        "frames": {d.video: d.count for _, d in videos}, "config": config.evaluation.__dict__,
    })
    print(f"scored {len(gallery)} gallery x {len(probes)} probe videos; rank-1 {cmc[0]:.4f}")
    return 0


def cmd_yield_sweep(args, config):
    tpl = _template(args)
    model = load_model(args.model) if args.model else None
    outcomes, report = yield_sweep(tpl, model, config, config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_yield_table(out / "yield_table.csv", report)
    write_yield_bins(out / "yield_bins.csv", report)
    with open(out / "outcomes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "yaw", "sample", "success", "stage"])
        for o in outcomes:
            w.writerow([o.method, o.yaw, o.sample, int(o.success), o.stage])
    items = [{"method": o.method, "yaw": o.yaw, "sample": o.sample,
              "status": "ok" if o.success else "failed", "stage": o.stage} for o in outcomes]
    _dump_json(out / "manifest.json", _manifest(config, "yield-sweep", items))
    print((out / "yield_bins.csv").read_text(), end="")
    return 0


def cmd_inspect_model(args, config):
    model = load_model(args.model)
    if args.export_json:
        Path(args.export_json).write_text(model_to_json(model))
    print(json.dumps(model_summary(model), indent=2, sort_keys=True))
    return 0


def cmd_show_config(args, config):
    print(config.to_json(), end="")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="facefront", description="Landmarking, frontalization and video-matching evaluation.")
    p.add_argument("--version", action="version", version=f"facefront {__version__}")
    p.add_argument("--config", help="JSON pipeline configuration (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-synthetic", help="render an annotated synthetic face corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=50)
    s.add_argument("--max-yaw", type=float, default=30.0, help="yaw drawn from [-max, max] degrees")
    s.add_argument("--canvas", type=int, default=176)
    s.add_argument("--template", help="depth template PNG (shipped template by default)")
    s.set_defaults(func=cmd_make_synthetic)

    s = sub.add_parser("train-landmarker", help="train a cascade from image + .pts pairs")
    s.add_argument("data", help="directory of images with <stem>.pts (and optional <stem>.box)")
    s.add_argument("--out", required=True, help="model file to write")
    s.set_defaults(func=cmd_train_landmarker)

    s = sub.add_parser("landmark", help="run a trained cascade over a directory of images")
    s.add_argument("images")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_landmark)

    s = sub.add_parser("frontalize", help="frontalize every image in a directory")
    s.add_argument("images", help="images, with optional <stem>.pts landmarks or <stem>.box boxes")
    s.add_argument("--model", help="cascade model for images without landmark files")
    s.add_argument("--template", help="depth template PNG (shipped template by default)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_frontalize)

    s = sub.add_parser("evaluate", help="score videos and write ROC/CMC curves")
    s.add_argument("labels", help="CSV: video,subject,descriptors[,track][,role]")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("yield-sweep", help="frontalization yield over a synthetic yaw sweep")
    s.add_argument("--model", help="cascade model; without it only ground-truth landmarks are used")
    s.add_argument("--template", help="depth template PNG (shipped template by default)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_yield_sweep)

    s = sub.add_parser("inspect-model", help="print a model summary")
    s.add_argument("model")
    s.add_argument("--export-json", help="also write a lossless JSON export")
    s.set_defaults(func=cmd_inspect_model)

    s = sub.add_parser("show-config", help="print the effective configuration")
    s.set_defaults(func=cmd_show_config)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise UsageError("--seed must be non-negative")
            config = type(config)(config.landmarker, config.frontalizer, config.evaluation, config.sweep,
                                  args.seed)
        return args.func(args, config)
    except UsageError as exc:
        print(f"facefront: error: {exc}", file=sys.stderr)
        return 1
    except (FacefrontError, OSError) as exc:
        print(f"facefront: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
