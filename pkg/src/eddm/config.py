"""Experiment configuration: one JSON document, every field optional.

Example::

    {
      "seed": 7,
      "plant": {"dt": 2.0, "n_steps": 500},
      "datasets": {"Train": {"sample_count": 128}},
      "train": {"max_epochs": 100},
      "tracking": {"a": 10, "b": 0.5, "c": 0.8, "omega": [0.5, 0.8]},
      "library": {"n_regimes": 6, "seeds_per_range": 1},
      "experiment": {"coverage": 0.05, "repeats": 5}
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dataset import DEFAULT_EXPERT, EXTP_PLAN, INTP_PLAN, TRAIN_PLAN, SamplingPlan
from .fnn import TrainConfig
from .plant import ControlAction, PlantConfig
from .pva import TrackingConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    threshold: float = 0.7
    expert_includes: tuple[str, ...] = DEFAULT_EXPERT
    exclude_surrogates: bool = True


@dataclass(frozen=True)
class LibraryConfig:
    """How the twin library splits the Train range (and, for extension
    twins, the Extp range) into overlapping severity regimes."""

    n_regimes: int = 6
    overlap: float = 0.75
    seeds_per_range: int = 3
    extension_regimes: int = 3  # regimes for any source after the first
    twin_target_mse: float = 0.3  # degC^2; library twins train past the single-model target
    stride: int = 1

    def __post_init__(self):
        if self.n_regimes < 1 or self.extension_regimes < 1 or self.seeds_per_range < 1:
            raise ValueError("regime and seed counts must be at least 1")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")
        if not self.twin_target_mse > 0 or self.stride < 1:
            raise ValueError("twin_target_mse must be positive and stride at least 1")


@dataclass(frozen=True)
class ExperimentConfig:
    coverage: float = 0.05
    repeats: int = 25
    excursion_margin: float = 10.0
    switch: ControlAction = ControlAction("context_switch", 120.0, 1.3, 60.0)
    base_w_end: float = 0.7
    base_actions: tuple[ControlAction, ...] = ()
    trace_episodes: int = 4  # per evaluated dataset

    def __post_init__(self):
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError("coverage must lie in (0, 1]")
        if self.repeats < 1 or self.trace_episodes < 0:
            raise ValueError("repeats must be >= 1 and trace_episodes >= 0")
        if not self.excursion_margin > 0:
            raise ValueError("excursion_margin must be positive")


@dataclass(frozen=True)
class EddmConfig:
    seed: int = 0
    plant: PlantConfig = PlantConfig()
    datasets: dict = field(default_factory=lambda: {"Train": TRAIN_PLAN, "Intp": INTP_PLAN, "Extp": EXTP_PLAN})
    features: FeatureConfig = FeatureConfig()
    train: TrainConfig = TrainConfig()
    tracking: TrackingConfig = TrackingConfig()
    library: LibraryConfig = LibraryConfig()
    experiment: ExperimentConfig = ExperimentConfig()

    def derived_seed(self, *stream) -> int:
        """Deterministic sub-seed for a named stream under the master seed."""
        key = [self.seed] + [_stream_key(s) for s in stream]
        return int(np.random.SeedSequence(key).generate_state(1)[0])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["datasets"] = {k: asdict(v) for k, v in self.datasets.items()}
        return d


def _stream_key(s) -> int:
    if isinstance(s, int):
        return s
    return sum((i + 1) * ord(c) for i, c in enumerate(str(s)))


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict, base: EddmConfig | None = None) -> EddmConfig:
    """Overlay ``data`` on ``base`` (defaults when omitted)."""
    base = base or EddmConfig()
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    allowed = {f.name for f in fields(EddmConfig)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")

    def overlay(name, cls):
        current = asdict(getattr(base, name))
        current.update(data.get(name) or {})
        return _build(cls, current, name)

    datasets = dict(base.datasets)
    for label, plan in (data.get("datasets") or {}).items():
        merged = asdict(datasets.get(label, SamplingPlan(label, 1)))
        merged.update(plan)
        merged["label"] = label
        datasets[label] = _build(SamplingPlan, merged, f"datasets.{label}")

    exp = asdict(base.experiment)
    exp.update(data.get("experiment") or {})
    try:
        exp["switch"] = ControlAction(**exp["switch"])
        exp["base_actions"] = tuple(ControlAction(**a) for a in exp["base_actions"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"experiment: {exc}") from exc
    return EddmConfig(
        seed=int(data.get("seed", base.seed)),
        plant=overlay("plant", PlantConfig),
        datasets=datasets,
        features=overlay("features", FeatureConfig),
        train=overlay("train", TrainConfig),
        tracking=overlay("tracking", TrackingConfig),
        library=overlay("library", LibraryConfig),
        experiment=_build(ExperimentConfig, exp, "experiment"),
    )


def load_config(path=None, seed: int | None = None) -> EddmConfig:
    cfg = EddmConfig()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        cfg = config_from_dict(data)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    return cfg


def ci_config(seed: int = 0) -> EddmConfig:
    """Laptop-scale settings: 128/32/32 episodes of 500 steps, six twins."""
    return config_from_dict(
        {
            "seed": seed,
            "plant": {"dt": 2.0, "n_steps": 500},
            "datasets": {
                "Train": {"sample_count": 128},
                "Intp": {"sample_count": 32},
                "Extp": {"sample_count": 32},
            },
            "library": {"seeds_per_range": 1},
            "experiment": {"repeats": 5},
        }
    )
