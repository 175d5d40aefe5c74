"""Probabilistic voting aggregation over a library of twins.

Each twin is scored at every timestep by a PID-style tracking error between
the surrogate parameters it predicts and the ones measured on the plant:

    e_k = a * e_P + b * e_I + c * e_D

where the proportional, integral and derivative parts are omega-weighted
sums over the (standardized) surrogate discrepancies.  Errors become voting
weights through the negative log of each twin's share of the total error,
renormalized to sum to one, and the SSF estimate is the weighted sum of the
twins' SSF predictions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import SURROGATES
from .fnn import TrainedTwin
from .plant import Episode


@dataclass(frozen=True)
class TrackingConfig:
    a: float = 10.0
    b: float = 0.5
    c: float = 0.8
    omega: tuple[float, ...] = (0.5, 0.8)
    epsilon: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))
        if min(self.a, self.b, self.c) < 0 or self.a == self.b == self.c == 0:
            raise ValueError("PID coefficients must be non-negative and not all zero")
        if not self.omega or min(self.omega) < 0 or max(self.omega) <= 0:
            raise ValueError("omega entries must be non-negative with at least one positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


class TrackingState:
    """Running integral and one-step memory for ``n_twins`` twins."""

    def __init__(self, n_twins: int, n_surrogates: int):
        self.integral = np.zeros((n_twins, n_surrogates))
        self.prev_measured: np.ndarray | None = None
        self.prev_predicted: np.ndarray | None = None
        self.step = 0

    def reset(self):
        self.integral[:] = 0.0
        self.prev_measured = None
        self.prev_predicted = None
        self.step = 0


def component_errors(state: TrackingState, measured, predicted, dt: float, cfg: TrackingConfig):
    """Advance ``state`` by one timestep and return ``(e_P, e_I, e_D)``.

    ``predicted`` is ``(n_surrogates,)`` for one twin or ``(K, n_surrogates)``
    for all twins; the results have matching leading shape.
    """
    measured = np.asarray(measured, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    single = predicted.ndim == 1
    pred = np.atleast_2d(predicted)
    omega = np.asarray(cfg.omega)
    if measured.shape != omega.shape or pred.shape[1] != len(omega):
        raise ValueError(f"surrogate vectors must have length {len(omega)}")
    if pred.shape != state.integral.shape:
        raise ValueError(f"state tracks {state.integral.shape}, got predictions {pred.shape}")
    if not dt > 0:
        raise ValueError("dt must be positive")

    diff = measured - pred
    state.integral += diff * dt
    if state.prev_measured is None:
        slope = np.zeros_like(diff)
    else:
        slope = ((measured - state.prev_measured) - (pred - state.prev_predicted)) / dt
    state.prev_measured = measured.copy()
    state.prev_predicted = pred.copy()
    state.step += 1

    e_p, e_i, e_d = diff @ omega, state.integral @ omega, slope @ omega
    if single:
        return float(e_p[0]), float(e_i[0]), float(e_d[0])
    return e_p, e_i, e_d


def total_error(e_p, e_i, e_d, cfg: TrackingConfig):
    return cfg.a * e_p + cfg.b * e_i + cfg.c * e_d


def weights_from_errors(errors, cfg: TrackingConfig = TrackingConfig()) -> np.ndarray:
    """Voting weights from total tracking errors.

    Each ``|e_k|`` (floored at ``epsilon``) is divided by the sum over twins;
    the weight is ``-log`` of that share, renormalized onto the simplex.
    Equal errors give uniform weights.
    """
    mag = np.maximum(np.abs(np.asarray(errors, dtype=float)), cfg.epsilon)
    if mag.ndim != 1 or not len(mag):
        raise ValueError("need a non-empty vector of errors")
    if not np.all(np.isfinite(mag)):
        raise ValueError("tracking errors must be finite")
    share = mag / mag.sum()
    raw = -np.log(share)
    total = raw.sum()
    if total <= 0 or np.all(mag == mag[0]):
        return np.full(len(mag), 1.0 / len(mag))
    return raw / total


def aggregate(ssf_preds, weights) -> float:
    ssf_preds = np.asarray(ssf_preds, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if ssf_preds.shape != weights.shape:
        raise ValueError("one weight per prediction required")
    y = float(weights @ ssf_preds)
    # dot-product rounding can land an ulp outside the hull
    return min(max(y, float(ssf_preds.min())), float(ssf_preds.max()))


@dataclass
class EnsembleStep:
    t: float
    surrogate_preds: np.ndarray  # (K, n_surrogates), physical units
    ssf_preds: np.ndarray  # (K,)
    e_p: np.ndarray
    e_i: np.ndarray
    e_d: np.ndarray
    errors: np.ndarray  # total e_k
    weights: np.ndarray
    y_hat: float
    ssf_true: float = field(default=float("nan"))


def surrogate_scales(twins: Sequence[TrainedTwin]) -> tuple[np.ndarray, np.ndarray]:
    """Shared ``(mean, signed_std)`` used to standardize surrogates.

    The sign orients every surrogate so that it rises with the SSF; without
    it, the omega-weighted sum cancels between anticorrelated surrogates
    (plenum temperature up, flow down) and hides a twin's error.
    """
    ref, signs = twins[0].norm_stats, twins[0].surrogate_signs
    for tw in twins[1:]:
        if any(tw.norm_stats[n] != ref[n] for n in SURROGATES) or tw.surrogate_signs != signs:
            raise ValueError("twins disagree on surrogate normalization statistics")
    mean = np.array([ref[n][0] for n in SURROGATES])
    std = np.array([ref[n][1] * signs.get(n, 1.0) for n in SURROGATES])
    return mean, std


def twin_predictions(twins: Sequence[TrainedTwin], episode: Episode) -> np.ndarray:
    """``(K, n_steps, n_outputs)`` with outputs reordered to SSF + SURROGATES.

    A twin's output at step t depends only on that step's sensor readings.
    """
    out = []
    for tw in twins:
        order = [tw.outputs.index(n) for n in ("ssf", *SURROGATES)]
        out.append(tw.predict(episode)[:, order])
    return np.stack(out)


def run_ensemble(
    twins: Sequence[TrainedTwin],
    episode: Episode,
    cfg: TrackingConfig = TrackingConfig(),
    preds: np.ndarray | None = None,
) -> list[EnsembleStep]:
    """Score, weight and aggregate every twin at every timestep of ``episode``.

    Only measured sensor channels feed the tracking errors; the hidden SSF is
    attached to each record purely for scoring.
    """
    if not twins:
        raise ValueError("empty twin library")
    for name in SURROGATES:
        if name not in episode.channels:
            raise KeyError(f"episode lacks measured surrogate {name!r}")
    if len(cfg.omega) != len(SURROGATES):
        raise ValueError(f"omega needs {len(SURROGATES)} entries")
    if preds is None:
        preds = twin_predictions(twins, episode)
    mean, std = surrogate_scales(twins)
    measured = (episode.matrix(SURROGATES) - mean) / std
    predicted = (preds[:, :, 1:] - mean) / std

    state = TrackingState(len(twins), len(SURROGATES))
    steps = []
    for i, t in enumerate(episode.times):
        e_p, e_i, e_d = component_errors(state, measured[i], predicted[:, i, :], episode.dt, cfg)
        err = total_error(e_p, e_i, e_d, cfg)
        w = weights_from_errors(err, cfg)
        ssf_k = preds[:, i, 0]
        steps.append(
            EnsembleStep(
                t=float(t),
                surrogate_preds=preds[:, i, 1:],
                ssf_preds=ssf_k,
                e_p=e_p,
                e_i=e_i,
                e_d=e_d,
                errors=err,
                weights=w,
                y_hat=aggregate(ssf_k, w),
                ssf_true=float(episode.ssf[i]),
            )
        )
    return steps


def aggregated_series(steps: Sequence[EnsembleStep]) -> np.ndarray:
    return np.array([s.y_hat for s in steps])


def export_trace(steps: Sequence[EnsembleStep], path) -> Path:
    """CSV trace: ``t, e_k..., P_k..., y_k..., y_hat, ssf_true``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    k = len(steps[0].weights) if steps else 0
    header = ["t", *[f"e_{j}" for j in range(k)], *[f"P_{j}" for j in range(k)], *[f"y_{j}" for j in range(k)], "y_hat", "ssf_true"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in steps:
            row = [s.t, *s.errors, *s.weights, *s.ssf_preds, s.y_hat, s.ssf_true]
            writer.writerow([repr(float(v)) for v in row])
    return path
