"""Versioned JSON pipeline configuration; unknown keys are rejected."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import DataError
from .evaluation import POSE_BINS
from .features import FeatureConfig
from .frontalizer import FrontalizerConfig

SCHEMA_VERSION = 1


def _check(cond, msg):
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class LandmarkerConfig:
    stages: int = 5
    components: int = 3
    ridge: float = 1e-3
    perturbations: int = 10
    patch_size: int = 32
    cells: int = 4
    bins: int = 9
    scale_jitter: float = 0.05
    shift_jitter: float = 0.05
    min_loglik_per_dim: float = -25.0

    def __post_init__(self):
        _check(self.stages >= 1, "landmarker.stages must be >= 1")
        _check(self.components >= 1, "landmarker.components must be >= 1")
        _check(self.ridge >= 0, "landmarker.ridge must be >= 0")
        _check(self.perturbations >= 0, "landmarker.perturbations must be >= 0")
        _check(0 <= self.scale_jitter < 1 and 0 <= self.shift_jitter < 1, "jitter must lie in [0, 1)")
        self.features()

    def features(self):
        return FeatureConfig(self.patch_size, self.cells, self.bins)


@dataclass(frozen=True)
class EvaluationConfig:
    sigma_k: float = 2.5
    window: int = 5
    exclude_same_video: bool = True

    def __post_init__(self):
        _check(self.sigma_k > 0, "evaluation.sigma_k must be positive")
        _check(self.window >= 3, "evaluation.window must be >= 3")


@dataclass(frozen=True)
class SweepConfig:
    bins: tuple = POSE_BINS
    samples_per_bin: int = 4
    canvas: int = 176

    def __post_init__(self):
        object.__setattr__(self, "bins", tuple(int(b) for b in self.bins))
        _check(len(self.bins) > 0 and all(0 <= b <= 90 for b in self.bins), "sweep.bins must lie in [0, 90]")
        _check(list(self.bins) == sorted(set(self.bins)), "sweep.bins must be strictly increasing")
        _check(self.samples_per_bin >= 1, "sweep.samples_per_bin must be >= 1")
        _check(self.canvas >= 64, "sweep.canvas must be >= 64")


@dataclass(frozen=True)
class PipelineConfig:
    landmarker: LandmarkerConfig = field(default_factory=LandmarkerConfig)
    frontalizer: FrontalizerConfig = field(default_factory=FrontalizerConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["sweep"]["bins"] = list(self.sweep.bins)
        return {"schema_version": SCHEMA_VERSION, **d}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_SECTIONS = {
    "landmarker": LandmarkerConfig,
    "frontalizer": FrontalizerConfig,
    "evaluation": EvaluationConfig,
    "sweep": SweepConfig,
}


def _section(cls, name, values):
    if not isinstance(values, dict):
        raise DataError(f"config section {name!r} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise DataError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    for k, v in values.items():
        default = known[k].default
        if isinstance(default, bool) and not isinstance(v, bool):
            raise DataError(f"{name}.{k} must be a boolean")
        if isinstance(default, int) and not isinstance(default, bool) and not (
                isinstance(v, int) and not isinstance(v, bool)):
            raise DataError(f"{name}.{k} must be an integer")
        if isinstance(default, float) and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise DataError(f"{name}.{k} must be a number")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid {name!r} section: {exc}") from exc


def config_from_dict(doc):
    if not isinstance(doc, dict):
        raise DataError("config must be a JSON object")
    doc = dict(doc)
    version = doc.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise DataError(f"unsupported config schema_version {version!r} (expected {SCHEMA_VERSION})")
    unknown = sorted(set(doc) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise DataError(f"unknown top-level key(s): {', '.join(unknown)}")
    seed = doc.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise DataError("seed must be a non-negative integer")
    sections = {k: _section(cls, k, doc.get(k, {})) for k, cls in _SECTIONS.items()}
    return PipelineConfig(seed=seed, **sections)


def config_from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def load_config(path):
    if path is None:
        return PipelineConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"{path}: unreadable config ({exc})") from exc
    return config_from_json(text)
