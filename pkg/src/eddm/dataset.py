"""Train / Intp / Extp datasets, feature selection, scaling, regime splits."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .plant import (
    CHANNELS,
    CORE_FLOW,
    PUMP1,
    PUMP2,
    SSF,
    UPPER_PLENUM,
    Episode,
    InvalidScenarioError,
    PlantConfig,
    PumpProfile,
    load_episode,
    save_episode,
    simulate_episode,
)

# twin outputs: the SSF first, then the surrogate tracking parameters
OUTPUTS: tuple[str, ...] = (SSF, UPPER_PLENUM, CORE_FLOW)
SURROGATES: tuple[str, ...] = OUTPUTS[1:]
# pump 2 is constant (noise only) in uncompensated Train episodes; z-scoring it
# would turn any pump-2 action into an input hundreds of sigmas out
DEFAULT_EXPERT = (PUMP1,)

NormStats = dict[str, tuple[float, float]]


class UndefinedCorrelationError(ValueError):
    pass


class ConstantChannelError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingPlan:
    label: str
    sample_count: int
    T_ramp: float = 467.81
    w_end_range: tuple[float, float] = (51.6, 100.0)  # % of w0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.w_end_range
        if self.sample_count <= 0:
            raise ValueError("sample_count must be positive")
        if not 0.0 <= lo <= hi <= 100.0:
            raise ValueError(f"bad w_end_range {self.w_end_range}")
        object.__setattr__(self, "w_end_range", (float(lo), float(hi)))


TRAIN_PLAN = SamplingPlan("Train", 1024, 467.81, (51.6, 100.0), seed=1)
INTP_PLAN = SamplingPlan("Intp", 250, 467.81, (51.6, 100.0), seed=2)
EXTP_PLAN = SamplingPlan("Extp", 250, 467.81, (0.0, 38.7), seed=3)


@dataclass(frozen=True)
class Dataset:
    episodes: tuple[Episode, ...]
    plan: SamplingPlan | None = None
    feature_names: tuple[str, ...] = ()
    norm_stats: NormStats = field(default_factory=dict)
    # sign of each surrogate's Train correlation with the SSF
    surrogate_signs: dict[str, float] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return self.plan.label if self.plan else "custom"

    def __len__(self):
        return len(self.episodes)

    def w_ends(self) -> np.ndarray:
        """End speeds in % of nominal."""
        return np.array([100.0 * ep.profile.w_end for ep in self.episodes])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return replace(self, episodes=tuple(self.episodes[i] for i in indices))

    def with_stats(self, feature_names: Sequence[str], norm_stats: NormStats, surrogate_signs=None) -> "Dataset":
        return replace(
            self,
            feature_names=tuple(feature_names),
            norm_stats=dict(norm_stats),
            surrogate_signs=dict(surrogate_signs or self.surrogate_signs),
        )


@dataclass(frozen=True)
class RegimePartition:
    sub_ranges: tuple[tuple[float, float], ...]
    seeds_per_range: int = 3

    @classmethod
    def overlapping(cls, low: float, high: float, n: int = 6, overlap: float = 0.5, seeds_per_range: int = 3):
        """``n`` equal-width windows over [low, high], consecutive windows
        sharing ``overlap`` of their width."""
        if n == 1:
            return cls(((low, high),), seeds_per_range)
        width = (high - low) / (1 + (n - 1) * (1 - overlap))
        step = width * (1 - overlap)
        ranges = [(low + i * step, low + i * step + width) for i in range(n)]
        ranges[-1] = (ranges[-1][0], high)
        return cls(tuple(ranges), seeds_per_range)

    @classmethod
    def disjoint(cls, low: float, high: float, n: int = 6, seeds_per_range: int = 1):
        edges = np.linspace(low, high, n + 1)
        return cls(tuple((float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])), seeds_per_range)


def build_dataset(plan: SamplingPlan, cfg: PlantConfig = PlantConfig()) -> Dataset:
    """Simulate ``plan.sample_count`` episodes with end speeds drawn uniformly
    from the plan's range (in percent)."""
    root = np.random.SeedSequence([plan.seed, _label_key(plan.label)])
    draw_rng = np.random.default_rng(root.spawn(1)[0])
    lo, hi = plan.w_end_range
    w_ends = draw_rng.uniform(lo, hi, size=plan.sample_count) / 100.0
    noise_seeds = root.generate_state(plan.sample_count, dtype=np.uint32)
    episodes = []
    for i, (w_end, noise_seed) in enumerate(zip(w_ends, noise_seeds)):
        profile = PumpProfile(w0=1.0, w_end=float(w_end), T_ramp=plan.T_ramp)
        try:
            ep = simulate_episode(profile, (), cfg, seed=int(noise_seed), tags={"dataset": plan.label, "index": i})
        except InvalidScenarioError as exc:
            raise InvalidScenarioError(f"{plan.label} sample {i}: {exc}") from exc
        episodes.append(ep)
    return Dataset(tuple(episodes), plan)


def _label_key(label: str) -> int:
    return sum((i + 1) * ord(c) for i, c in enumerate(label))


def pearson(x, y) -> float:
    """Pearson correlation with population moments."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two 1-D series of equal length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("zero-variance input")
    r = np.dot(dx, dy) / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def pooled_correlations(ds: Dataset, target: str = SSF) -> dict[str, float]:
    """Correlation of each sensor channel with ``target`` over the
    concatenated episodes; channels without variance are omitted."""
    y = np.concatenate([ep.matrix([target])[:, 0] for ep in ds.episodes])
    out = {}
    for name in CHANNELS:
        x = np.concatenate([ep.channels[name] for ep in ds.episodes])
        try:
            out[name] = pearson(x, y)
        except UndefinedCorrelationError:
            continue
    return out


def select_features(
    ds: Dataset,
    target: str = SSF,
    threshold: float = 0.7,
    expert_includes: Sequence[str] = DEFAULT_EXPERT,
) -> list[str]:
    """Channels with ``|rho| >= threshold`` plus the expert picks, ordered by
    descending ``|rho|`` then name."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    rho = pooled_correlations(ds, target)
    chosen = {name for name, r in rho.items() if abs(r) >= threshold}
    for name in expert_includes:
        if name not in CHANNELS:
            raise KeyError(f"unknown channel {name!r}")
        chosen.add(name)
    if not chosen:
        raise ValueError("feature selection produced no channels")
    return sorted(chosen, key=lambda n: (-abs(rho.get(n, 0.0)), n))


def compute_norm_stats(ds: Dataset, names: Sequence[str]) -> NormStats:
    stats = {}
    for name in names:
        v = np.concatenate([ep.matrix([name])[:, 0] for ep in ds.episodes])
        mean, std = float(v.mean()), float(v.std())
        if not std > 0:
            raise ConstantChannelError(f"channel {name!r} is constant in the training data")
        stats[name] = (mean, std)
    return stats


def normalize(values, norm_stats: NormStats, names: Sequence[str]) -> np.ndarray:
    """Z-score the columns of ``values`` (named by ``names``)."""
    mean, std = _stat_vectors(norm_stats, names)
    return (np.asarray(values, dtype=float) - mean) / std


def denormalize(values, norm_stats: NormStats, names: Sequence[str]) -> np.ndarray:
    mean, std = _stat_vectors(norm_stats, names)
    return np.asarray(values, dtype=float) * std + mean


def _stat_vectors(norm_stats, names):
    try:
        pairs = [norm_stats[n] for n in names]
    except KeyError as exc:
        raise KeyError(f"no normalization statistics for {exc.args[0]!r}") from None
    mean = np.array([p[0] for p in pairs])
    std = np.array([p[1] for p in pairs])
    if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(std)):
        raise ValueError("non-finite normalization statistics")
    if np.any(std <= 0):
        raise ConstantChannelError("zero standard deviation in normalization statistics")
    return mean, std


def prepare(
    train: Dataset,
    others: Sequence[Dataset] = (),
    threshold: float = 0.7,
    expert_includes: Sequence[str] = DEFAULT_EXPERT,
    features: Sequence[str] | None = None,
) -> list[Dataset]:
    """Select features on ``train`` and stamp its statistics on every dataset."""
    if features is None:
        features = select_features(train, SSF, threshold, expert_includes)
    stats = compute_norm_stats(train, list(dict.fromkeys([*features, *OUTPUTS])))
    rho = pooled_correlations(train, SSF)
    signs = {name: (-1.0 if rho.get(name, 1.0) < 0 else 1.0) for name in SURROGATES}
    return [ds.with_stats(features, stats, signs) for ds in (train, *others)]


def supervised_arrays(ds: Dataset, inputs: Sequence[str], stride: int = 1):
    """Normalized ``(X, Y, groups)``; ``groups`` holds the episode index of
    each row so folds can be split by episode."""
    xs, ys, gs = [], [], []
    for i, ep in enumerate(ds.episodes):
        xs.append(ep.matrix(inputs)[::stride])
        ys.append(ep.matrix(OUTPUTS)[::stride])
        gs.append(np.full(len(xs[-1]), i))
    X = normalize(np.vstack(xs), ds.norm_stats, inputs)
    Y = normalize(np.vstack(ys), ds.norm_stats, OUTPUTS)
    return X, Y, np.concatenate(gs)


def partition_regimes(train: Dataset, part: RegimePartition) -> list[Dataset]:
    """One subset per sub-range, holding the episodes whose end speed falls
    inside it (closed interval)."""
    w = train.w_ends()
    subsets = []
    covered = np.zeros(len(w), dtype=bool)
    for lo, hi in part.sub_ranges:
        # tolerate float round-off at the shared range edges
        mask = (w >= lo - 1e-9) & (w <= hi + 1e-9)
        if not mask.any():
            raise ValueError(f"regime [{lo:g}, {hi:g}] contains no episodes")
        covered |= mask
        subsets.append(train.subset(np.flatnonzero(mask)))
    if not covered.all():
        missing = np.flatnonzero(~covered)
        raise ValueError(f"{len(missing)} episodes fall outside every regime (first w_end={w[missing[0]]:g}%)")
    return subsets


# -- manifest ----------------------------------------------------------------


def save_dataset(ds: Dataset, directory) -> Path:
    """Write each episode plus a ``manifest.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, ep in enumerate(ds.episodes):
        csv_path = save_episode(ep, directory / f"episode_{i:05d}")
        files.append(csv_path.name)
    manifest = {
        "schema_version": 1,
        "plan": asdict(ds.plan) if ds.plan else None,
        "episodes": files,
        "feature_names": list(ds.feature_names),
        "norm_stats": {k: list(v) for k, v in ds.norm_stats.items()},
        "surrogate_signs": ds.surrogate_signs,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("schema_version") != 1:
        raise ValueError(f"{directory}: unsupported dataset manifest version")
    plan = manifest["plan"]
    if plan is not None:
        plan = SamplingPlan(**{**plan, "w_end_range": tuple(plan["w_end_range"])})
    episodes = tuple(load_episode(directory / f) for f in manifest["episodes"])
    return Dataset(
        episodes,
        plan,
        tuple(manifest["feature_names"]),
        {k: (v[0], v[1]) for k, v in manifest["norm_stats"].items()},
        manifest.get("surrogate_signs", {}),
    )
