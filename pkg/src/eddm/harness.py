"""Experiment driver: twin libraries, ensemble-vs-single comparisons,
excursion metrics, per-twin breakdowns and the context-switch scenario.

Every random choice is drawn from a stream derived from the configuration's
master seed, so a report depends only on the configuration.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import EddmConfig
from .dataset import Dataset, RegimePartition, build_dataset, partition_regimes, prepare
from .fnn import EmptyLibraryError, TrainedTwin, TrainingDivergedError, train_twin, twin_inputs
from .plant import ControlAction, Episode, PumpProfile, inject_context_switch, simulate_episode
from .pva import EnsembleStep, aggregated_series, export_trace, run_ensemble, twin_predictions

REPORT_SCHEMA = 1
EVAL_LABELS = ("Intp", "Extp")


class CaseError(RuntimeError):
    """A case failed; ``case_id`` names it."""

    def __init__(self, case_id: str, message: str):
        super().__init__(f"case {case_id}: {message}")
        self.case_id = case_id


# -- metrics -----------------------------------------------------------------


def _paired(predicted, truth):
    y = np.asarray(predicted, dtype=float)
    t = np.asarray(truth, dtype=float)
    if y.shape != t.shape or y.ndim != 1:
        raise ValueError(f"series shapes differ: {y.shape} vs {t.shape}")
    if not len(y):
        raise ValueError("empty series")
    return y, t


def episode_mse(predicted, truth) -> float:
    y, t = _paired(predicted, truth)
    return float(np.mean((y - t) ** 2))


def excursions(predicted, truth) -> tuple[float, float]:
    """Largest and smallest signed error ``predicted - truth`` over the episode."""
    y, t = _paired(predicted, truth)
    d = y - t
    return float(d.max()), float(d.min())


# -- data context and libraries ------------------------------------------------


@dataclass
class DataContext:
    """Generated datasets (carrying Train statistics) and trained libraries,
    cached per source dataset so adding sources reuses earlier twins."""

    config: EddmConfig
    datasets: dict[str, Dataset]
    twins_by_source: dict[tuple[str, float], list[TrainedTwin]] = field(default_factory=dict)

    @property
    def inputs(self) -> list[str]:
        return twin_inputs(self.datasets["Train"].feature_names, self.config.features.exclude_surrogates)

    def library(self, sources: Sequence[str], coverage: float) -> list[TrainedTwin]:
        twins = []
        for position, label in enumerate(sources):
            key = (label, coverage)
            if key not in self.twins_by_source:
                self.twins_by_source[key] = _source_twins(self, label, coverage, first=position == 0)
            twins.extend(self.twins_by_source[key])
        return twins


def build_context(cfg: EddmConfig) -> DataContext:
    if "Train" not in cfg.datasets:
        raise ValueError("configuration defines no Train dataset")
    raw = {label: build_dataset(replace(plan, seed=cfg.derived_seed("dataset", label, plan.seed)), cfg.plant) for label, plan in cfg.datasets.items()}
    others = [raw[k] for k in raw if k != "Train"]
    prepared = prepare(raw["Train"], others, cfg.features.threshold, cfg.features.expert_includes)
    labels = ["Train", *[k for k in raw if k != "Train"]]
    return DataContext(cfg, dict(zip(labels, prepared)))


def episode_budget(coverage: float, n_available: int, floor: int) -> int:
    """Episodes in a coverage subsample: ``round(coverage * n)`` but at least
    ``floor`` (so k-fold selection has a full set of folds), capped at ``n``."""
    if not 0.0 < coverage <= 1.0:
        raise ValueError("coverage must lie in (0, 1]")
    return min(n_available, max(floor, int(round(coverage * n_available))))


def _source_twins(ctx: DataContext, label: str, coverage: float, first: bool) -> list[TrainedTwin]:
    cfg = ctx.config
    lib = cfg.library
    ds = ctx.datasets[label]
    lo, hi = ds.plan.w_end_range
    n = lib.n_regimes if first else lib.extension_regimes
    part = RegimePartition.overlapping(lo, hi, n, lib.overlap, lib.seeds_per_range)
    budget = episode_budget(coverage, len(ds), cfg.train.k_folds)
    twin_cfg = replace(cfg.train, target_mse=lib.twin_target_mse)
    twins = []
    for j, (sub, bounds) in enumerate(zip(partition_regimes(ds, part), part.sub_ranges)):
        for s in range(part.seeds_per_range):
            rng = np.random.default_rng(cfg.derived_seed("library", label, j, s))
            idx = np.sort(rng.choice(len(sub), min(budget, len(sub)), replace=False))
            chosen = sub.subset(idx)
            regime = {
                "name": f"{label}-r{j}-s{s}",
                "source": label,
                "w_end_range": [float(bounds[0]), float(bounds[1])],
                "episodes": [int(ep.tags["index"]) for ep in chosen.episodes],
            }
            seed = cfg.derived_seed("twin", label, j, s)
            twins.append(train_twin(chosen, replace(twin_cfg, seed=seed), regime, ctx.inputs, lib.stride))
    return twins


# -- evaluation --------------------------------------------------------------


@dataclass
class DatasetResult:
    label: str
    episode_mse: list[float]
    mean_mse: float
    largest_positive: float
    largest_negative: float
    within_margin: bool
    per_twin_mse: list[list[float]] | None = None  # episodes x twins
    repeat_mse: list[float] | None = None
    capture: tuple[float, float] | None = None


@dataclass
class EvalReport:
    case_id: str
    name: str
    kind: str
    sources: tuple[str, ...]
    coverage: float
    repeats: int | None
    seed: int
    results: dict[str, DatasetResult]
    n_models: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sources"] = list(self.sources)
        return d


@dataclass(frozen=True)
class ExperimentSpec:
    case_id: str
    kind: str  # "ensemble" | "single"
    sources: tuple[str, ...]
    coverage: float
    eval_labels: tuple[str, ...] = EVAL_LABELS
    repeats: int = 1
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("ensemble", "single"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError("coverage must lie in (0, 1]")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if not self.sources:
            raise ValueError("at least one training dataset is required")


def comparison_specs(cfg: EddmConfig) -> list[ExperimentSpec]:
    """The six ensemble-vs-single cases under varying coverage."""
    cov = cfg.experiment.coverage
    reps = cfg.experiment.repeats
    both = ("Train", "Extp")
    rows = [
        ("1", "ensemble", ("Train",), cov),
        ("2", "ensemble", both, cov),
        ("3", "single", ("Train",), cov),
        ("4", "single", both, cov),
        ("5", "single", both, 2 * cov),
        ("6", "single", both, 8 * cov),
    ]
    return [
        ExperimentSpec(cid, kind, src, min(c, 1.0), EVAL_LABELS, reps if kind == "single" else 1, cfg.derived_seed("case", cid), _case_name(kind, src, min(c, 1.0)))
        for cid, kind, src, c in rows
    ]


def _case_name(kind: str, sources, coverage: float) -> str:
    return f"{'EDDM' if kind == 'ensemble' else 'single'} {' & '.join(sources)} {coverage * 100:g}%"


def evaluate_library(
    library: Sequence[TrainedTwin],
    ds: Dataset,
    cfg: EddmConfig,
    trace_dir: Path | None = None,
) -> DatasetResult:
    """Run the PVA over every episode of ``ds``."""
    if not library:
        raise EmptyLibraryError("empty twin library")
    mses, per_twin, pos, neg = [], [], [], []
    margin = cfg.experiment.excursion_margin
    for i, ep in enumerate(ds.episodes):
        preds = twin_predictions(library, ep)
        steps = run_ensemble(library, ep, cfg.tracking, preds)
        y = aggregated_series(steps)
        mses.append(episode_mse(y, ep.ssf))
        per_twin.append([episode_mse(p, ep.ssf) for p in preds[:, :, 0]])
        hi, lo = excursions(y, ep.ssf)
        pos.append(hi)
        neg.append(lo)
        if trace_dir is not None and i < cfg.experiment.trace_episodes:
            export_trace(steps, trace_dir / f"{ds.label}_{i:03d}.csv")
    hi, lo = max(pos), min(neg)
    return DatasetResult(ds.label, mses, float(np.mean(mses)), hi, lo, max(hi, -lo) <= margin, per_twin)


def _coverage_subsample(datasets: Sequence[Dataset], coverage: float, floor: int, rng) -> Dataset:
    pooled = [ep for ds in datasets for ep in ds.episodes]
    n = episode_budget(coverage, len(pooled), floor)
    idx = np.sort(rng.choice(len(pooled), n, replace=False))
    return replace(datasets[0], episodes=tuple(pooled[i] for i in idx))


def run_case(spec: ExperimentSpec, ctx: DataContext, trace_dir: Path | None = None) -> EvalReport:
    cfg = ctx.config
    for label in (*spec.sources, *spec.eval_labels):
        if label not in ctx.datasets:
            raise CaseError(spec.case_id, f"dataset {label!r} is not defined")
    try:
        if spec.kind == "ensemble":
            library = ctx.library(spec.sources, spec.coverage)
            results = {}
            for label in spec.eval_labels:
                sub = trace_dir / f"case{spec.case_id}" if trace_dir is not None else None
                results[label] = evaluate_library(library, ctx.datasets[label], cfg, sub)
            return EvalReport(spec.case_id, spec.name, spec.kind, spec.sources, spec.coverage, None, spec.seed, results, len(library))
        return _run_single(spec, ctx)
    except TrainingDivergedError as exc:
        raise CaseError(spec.case_id, str(exc)) from exc


def _run_single(spec: ExperimentSpec, ctx: DataContext) -> EvalReport:
    cfg = ctx.config
    seq = np.random.SeedSequence(spec.seed)
    per_repeat = {label: [] for label in spec.eval_labels}
    for r, child in enumerate(seq.spawn(spec.repeats)):
        sample_seq, train_seq = child.spawn(2)
        subset = _coverage_subsample([ctx.datasets[s] for s in spec.sources], spec.coverage, cfg.train.k_folds, np.random.default_rng(sample_seq))
        tcfg = replace(cfg.train, seed=int(train_seq.generate_state(1)[0]))
        model = train_twin(subset, tcfg, {"name": f"case{spec.case_id}-repeat{r}"}, ctx.inputs, cfg.library.stride)
        for label in spec.eval_labels:
            per_repeat[label].append([model.predict(ep)[:, 0] for ep in ctx.datasets[label].episodes])
    results = {label: _single_result(ctx.datasets[label], per_repeat[label], cfg) for label in spec.eval_labels}
    return EvalReport(spec.case_id, spec.name, spec.kind, spec.sources, spec.coverage, spec.repeats, spec.seed, results, 1)


def _single_result(ds: Dataset, repeat_preds, cfg: EddmConfig) -> DatasetResult:
    mse = np.array([[episode_mse(y, ep.ssf) for y, ep in zip(preds, ds.episodes)] for preds in repeat_preds])
    ex = [excursions(y, ep.ssf) for preds in repeat_preds for y, ep in zip(preds, ds.episodes)]
    hi, lo = max(e[0] for e in ex), min(e[1] for e in ex)
    repeat_mse = mse.mean(axis=1)
    mean = float(repeat_mse.mean())
    half = 1.96 * float(repeat_mse.std(ddof=1)) if len(repeat_mse) > 1 else 0.0
    return DatasetResult(
        ds.label,
        [float(v) for v in mse.mean(axis=0)],
        mean,
        hi,
        lo,
        max(hi, -lo) <= cfg.experiment.excursion_margin,
        repeat_mse=[float(v) for v in repeat_mse],
        capture=(mean - half, mean + half),
    )


def per_twin_breakdown(library: Sequence[TrainedTwin], episode: Episode, cfg: EddmConfig) -> tuple[list[float], float]:
    """Each twin's standalone SSF MSE on ``episode`` and the ensemble's."""
    preds = twin_predictions(library, episode)
    y = aggregated_series(run_ensemble(library, episode, cfg.tracking, preds))
    return [episode_mse(p, episode.ssf) for p in preds[:, :, 0]], episode_mse(y, episode.ssf)


# -- context switch ------------------------------------------------------------


@dataclass
class SwitchTrace:
    label: str
    episode: Episode
    steps: list[EnsembleStep]
    mse: float
    largest_positive: float
    largest_negative: float
    post_switch_max_abs_error: float
    within_margin: bool
    per_twin_mse_before: list[float]
    per_twin_mse_after: list[float]

    def summary(self) -> dict:
        return {
            "label": self.label,
            "mse": self.mse,
            "largest_positive": self.largest_positive,
            "largest_negative": self.largest_negative,
            "post_switch_max_abs_error": self.post_switch_max_abs_error,
            "within_margin": self.within_margin,
            "per_twin_mse_before": self.per_twin_mse_before,
            "per_twin_mse_after": self.per_twin_mse_after,
        }


def context_switch_experiment(
    library: Sequence[TrainedTwin],
    profile: PumpProfile,
    switch: ControlAction,
    cfg: EddmConfig,
    base_actions: Sequence[ControlAction] = (),
) -> tuple[SwitchTrace, SwitchTrace]:
    """Baseline and switched runs sharing one noise realization.

    The ensemble is given no hint that a switch happened; only the measured
    channels change.
    """
    if not library:
        raise EmptyLibraryError("empty twin library")
    seed = cfg.derived_seed("context-switch")
    base = simulate_episode(profile, tuple(base_actions), cfg.plant, seed=seed, tags={"run": "baseline"})
    switched = inject_context_switch(profile, tuple(base_actions), cfg.plant, switch, seed=seed, tags={"run": "switched"})
    return (
        _switch_trace("baseline", library, base, switch.t_start, cfg),
        _switch_trace("switched", library, switched, switch.t_start, cfg),
    )


def _switch_trace(label, library, ep: Episode, t_switch: float, cfg: EddmConfig) -> SwitchTrace:
    preds = twin_predictions(library, ep)
    steps = run_ensemble(library, ep, cfg.tracking, preds)
    y = aggregated_series(steps)
    after = ep.times > t_switch
    err = y - ep.ssf
    post = float(np.abs(err[after]).max()) if after.any() else 0.0
    hi, lo = excursions(y, ep.ssf)

    def split_mse(mask):
        if not mask.any():
            return [0.0] * len(library)
        return [episode_mse(p[mask], ep.ssf[mask]) for p in preds[:, :, 0]]

    return SwitchTrace(
        label, ep, steps, episode_mse(y, ep.ssf), hi, lo, post, post <= cfg.experiment.excursion_margin, split_mse(~after), split_mse(after)
    )


# -- reports -----------------------------------------------------------------


def report_document(command: str, cfg: EddmConfig, body: dict) -> dict:
    return {"schema_version": REPORT_SCHEMA, "command": command, "seed": cfg.seed, "config": cfg.to_dict(), **body}


COMPARISON_COLUMNS = ["case", "name", "model", "training_data", "coverage", "repeats"] + [
    f"{label.lower()}_{col}" for label in EVAL_LABELS for col in ("mse", "capture_lower", "capture_upper", "largest_positive", "largest_negative")
]


def write_comparison_table(reports: Sequence[EvalReport], path) -> Path:
    """One row per case; capture bounds and repeats are blank for ensembles."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARISON_COLUMNS)
        for rep in reports:
            row = [rep.case_id, rep.name, rep.kind, "+".join(rep.sources), repr(rep.coverage), rep.repeats if rep.kind == "single" else ""]
            for label in EVAL_LABELS:
                res = rep.results.get(label)
                if res is None:
                    row += [""] * 5
                    continue
                lower, upper = res.capture if res.capture is not None else ("", "")
                row += [repr(res.mean_mse), _cell(lower), _cell(upper), repr(res.largest_positive), repr(res.largest_negative)]
            w.writerow(row)
    return path


def _cell(v):
    return v if v == "" else repr(float(v))
