"""Experiment configuration: one YAML file, validated on load."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .persona import Variant
from .sampler import DEFAULT_GRID, MAX_TEMPERATURE

PREDICTION_SOURCES = ("llm", "file", "baseline")
BASELINES = ("random", "majority")
CALIBRATORS = ("none", "avg_conf", "pair_rank")
ENDPOINTS = ("openai", "stub")
PROFILE_STRATEGIES = ("situation", "pool")
# run-local settings that never change results and stay out of the hash
UNHASHED = ("workers", "out", "cache_dir")


@dataclass
class DatasetConfig:
    test: str = ""
    train: str | None = None
    dev: str | None = None
    layout: dict[str, Any] = field(default_factory=dict)
    dimension_map: str | None = None
    statements: str | None = None


@dataclass
class PredictionConfig:
    source: str = "llm"
    file: str | None = None
    baseline: str | None = None


@dataclass
class ModelConfig:
    name: str = "model"
    endpoint: str = "openai"
    base_url_env: str = "OPENAI_BASE_URL"
    api_key_env: str = "OPENAI_API_KEY"
    max_tokens: int | None = 16
    stop: list[str] | None = None
    timeout: float = 60.0
    attempts: int = 3
    backoff: float = 0.5


@dataclass
class SamplingConfig:
    variant: str = "vanilla"
    n_samples: int = 30
    # a number, or "grid" to use the temperature chosen by grid-temp
    temperature: float | str = 0.75
    grid: list[float] = field(default_factory=lambda: list(DEFAULT_GRID))
    profiles: str = "situation"
    n_personas: int = 5
    profile_fallback: bool = False
    max_failure_rate: float = 0.5


@dataclass
class CalibrationConfig:
    method: str = "none"
    n_rankings: int = 10
    steps: int = 500
    learning_rate: float = 0.05
    tol: float = 1e-8


@dataclass
class SmoothingConfig:
    kind: str = "none"
    sigma: float = 1.0
    w: float = 0.7


@dataclass
class EvaluationConfig:
    weighting: str = "unweighted"
    variance: str = "auto"


@dataclass
class AnalysisConfig:
    group_by: list[str] = field(default_factory=list)
    group_missing: str = "skip"
    rank_k: int = 3
    modality_rule: str = "plateau"
    # label -> output directory of another run, tested against this run
    compare: dict[str, str] = field(default_factory=dict)
    significance_unit: str = "situation"


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    predictions: PredictionConfig = field(default_factory=PredictionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    seed: int = 0
    workers: int = 4
    out: str = "out"
    cache_dir: str = ".appraisal_cache"
    # directory that relative paths are resolved against
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value).expanduser()
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.out)

    @property
    def cache_path(self) -> Path:
        return self.path(self.cache_dir)

    def to_dict(self, *, hashed: bool = False) -> dict[str, Any]:
        data = dataclasses.asdict(self)
        data.pop("base_dir")
        if hashed:
            for key in UNHASHED:
                data.pop(key)
        return data

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(hashed=True), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def validate(self, *, check_paths: bool = True) -> "ExperimentConfig":
        _validate(self, check_paths)
        return self


_SECTIONS = {
    "dataset": DatasetConfig,
    "predictions": PredictionConfig,
    "model": ModelConfig,
    "sampling": SamplingConfig,
    "calibration": CalibrationConfig,
    "smoothing": SmoothingConfig,
    "evaluation": EvaluationConfig,
    "analysis": AnalysisConfig,
}


def _build(cls, data: Any, where: str):
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: Mapping[str, Any], base_dir: str | Path = ".", *, check_paths: bool = True) -> ExperimentConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a mapping")
    top = {k: v for k, v in data.items() if k not in _SECTIONS}
    sections = {k: _build(cls, data.get(k), k) for k, cls in _SECTIONS.items()}
    if "dataset" not in data:
        raise ConfigError("config needs a 'dataset' section")
    cfg = _build(ExperimentConfig, {**top, **sections}, "config")
    cfg.base_dir = Path(base_dir)
    return cfg.validate(check_paths=check_paths)


def load_config(path: str | Path, **overrides: Any) -> ExperimentConfig:
    """Read a YAML config; keyword overrides (e.g. ``seed``) replace top-level keys."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    data = dict(data or {})
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data, path.parent)


def _check_temperature(t: Any, where: str) -> None:
    if isinstance(t, bool) or not isinstance(t, (int, float)) or not 0 <= t <= MAX_TEMPERATURE:
        raise ConfigError(f"{where}: temperature {t!r} must be a number in [0, {MAX_TEMPERATURE}]")


def _choice(value: Any, options: tuple[str, ...], where: str) -> None:
    if value not in options:
        raise ConfigError(f"{where}: {value!r} is not one of {', '.join(options)}")


def _validate(cfg: ExperimentConfig, check_paths: bool) -> None:
    ds = cfg.dataset
    if not ds.test:
        raise ConfigError("dataset.test is required")
    if check_paths:
        for key in ("test", "train", "dev", "dimension_map", "statements"):
            p = cfg.path(getattr(ds, key))
            if p is not None and not p.exists():
                raise ConfigError(f"dataset.{key}: {p} does not exist")

    pr = cfg.predictions
    _choice(pr.source, PREDICTION_SOURCES, "predictions.source")
    # exactly one prediction source: the selected one, with no leftovers from another
    if pr.source == "file":
        if not pr.file:
            raise ConfigError("predictions.source=file needs predictions.file")
        if pr.baseline:
            raise ConfigError("predictions.file and predictions.baseline are mutually exclusive")
        if check_paths and not cfg.path(pr.file).exists():
            raise ConfigError(f"predictions.file: {cfg.path(pr.file)} does not exist")
    elif pr.source == "baseline":
        _choice(pr.baseline, BASELINES, "predictions.baseline")
        if pr.file:
            raise ConfigError("predictions.file and predictions.baseline are mutually exclusive")
        if pr.baseline == "majority" and not ds.train:
            raise ConfigError("the majority baseline needs dataset.train")
    elif pr.file or pr.baseline:
        raise ConfigError("predictions.source=llm cannot be combined with predictions.file/baseline")

    _choice(cfg.model.endpoint, ENDPOINTS, "model.endpoint")
    if cfg.model.attempts < 1:
        raise ConfigError("model.attempts must be at least 1")

    s = cfg.sampling
    try:
        Variant(s.variant)
    except ValueError:
        raise ConfigError(f"sampling.variant: {s.variant!r} is not one of {', '.join(v.value for v in Variant)}") from None
    if s.n_samples < 1 or s.n_personas < 1:
        raise ConfigError("sampling.n_samples and sampling.n_personas must be positive")
    if s.temperature == "grid":
        if not ds.dev:
            raise ConfigError("sampling.temperature=grid needs dataset.dev for the grid search")
    else:
        _check_temperature(s.temperature, "sampling.temperature")
    if not s.grid:
        raise ConfigError("sampling.grid is empty")
    for t in s.grid:
        _check_temperature(t, "sampling.grid")
    _choice(s.profiles, PROFILE_STRATEGIES, "sampling.profiles")
    if not 0 <= s.max_failure_rate <= 1:
        raise ConfigError("sampling.max_failure_rate must be in [0, 1]")

    c = cfg.calibration
    _choice(c.method, CALIBRATORS, "calibration.method")
    if c.method != "none" and pr.source != "llm":
        raise ConfigError("calibration needs predictions.source=llm")
    if c.n_rankings < 1 or c.steps < 1 or c.learning_rate <= 0:
        raise ConfigError("calibration.n_rankings, steps and learning_rate must be positive")

    sm = cfg.smoothing
    _choice(sm.kind, ("none", "unimodal", "bimodal"), "smoothing.kind")
    if not sm.sigma > 0 or not 0 < sm.w < 1:
        raise ConfigError("smoothing.sigma must be positive and smoothing.w in (0, 1)")

    _choice(cfg.evaluation.weighting, ("unweighted", "item"), "evaluation.weighting")
    _choice(cfg.evaluation.variance, ("auto", "population"), "evaluation.variance")

    a = cfg.analysis
    if isinstance(a.group_by, str):
        a.group_by = [a.group_by]
    _choice(a.group_missing, ("skip", "error"), "analysis.group_missing")
    _choice(a.modality_rule, ("plateau", "multimode"), "analysis.modality_rule")
    _choice(a.significance_unit, ("situation", "item"), "analysis.significance_unit")
    if a.rank_k < 1:
        raise ConfigError("analysis.rank_k must be positive")

    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(cfg.workers, int) or cfg.workers < 1:
        raise ConfigError("workers must be a positive integer")
