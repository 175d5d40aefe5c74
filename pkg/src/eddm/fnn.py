"""Dense ReLU networks trained with momentum SGD, k-fold epoch selection and
L2 weight decay, plus the on-disk twin library."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import OUTPUTS, SURROGATES, Dataset, NormStats, denormalize, normalize, supervised_arrays
from .plant import Episode

LIBRARY_SCHEMA = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, message: str = ""):
        super().__init__(message or f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


class LibraryError(RuntimeError):
    pass


class EmptyLibraryError(LibraryError):
    pass


@dataclass(eq=False)
class NetworkParams:
    """Weights are stored ``(fan_in, fan_out)`` so a batch is ``X @ W + b``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i} does not chain onto layer {i - 1}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (*self.weights, *self.biases))

    def __eq__(self, other):
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return (
            len(self.weights) == len(other.weights)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


def init_params(layer_sizes: Sequence[int], rng: np.random.Generator) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases)


def forward(params: NetworkParams, x) -> np.ndarray:
    """Network output for one feature vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.layer_sizes[0]:
        raise ValueError(f"expected {params.layer_sizes[0]} inputs, got {x.shape[-1]}")
    return _forward(params, x)[0][-1]


def _forward(params, X):
    acts, pres = [X], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w + b
        pres.append(z)
        acts.append(z if i == last else np.maximum(z, 0.0))
    return acts, pres


def loss(params: NetworkParams, X, Y, l2_lambda: float = 0.0) -> float:
    """Mean squared error over every output of every sample, plus
    ``l2_lambda`` times the sum of squared weights (biases excluded)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    err = forward(params, X) - Y
    reg = sum(float(np.sum(w * w)) for w in params.weights)
    return float(np.mean(err * err)) + l2_lambda * reg


def backprop(params: NetworkParams, X, Y, l2_lambda: float = 0.0) -> NetworkParams:
    """Gradient of :func:`loss`, returned in the shape of ``params``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    acts, pres = _forward(params, X)
    delta = 2.0 * (acts[-1] - Y) / Y.size
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta + 2.0 * l2_lambda * params.weights[i]
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * (pres[i - 1] > 0)
    return NetworkParams(gw, gb)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 400
    l2_lambda: float = 1e-6
    k_folds: int = 5
    target_mse: float = 2.5  # degC^2 on the denormalized SSF
    seed: int = 0
    momentum: float = 0.9
    hidden: tuple[int, ...] = (32, 32, 16)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")
        if self.k_folds < 2:
            raise ValueError("k_folds must be at least 2")
        if not self.target_mse > 0:
            raise ValueError("target_mse must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


def kfold_groups(groups: np.ndarray, k: int, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split rows into ``k`` folds by whole group (episode); fold group counts
    differ by at most one."""
    uniq = np.unique(groups)
    if len(uniq) < k:
        raise ValueError(f"{len(uniq)} groups cannot form {k} folds")
    order = rng.permutation(uniq)
    folds = []
    for held in np.array_split(order, k):
        mask = np.isin(groups, held)
        folds.append((np.flatnonzero(~mask), np.flatnonzero(mask)))
    return folds


def _sgd(params, X, Y, cfg, epochs, rng, val=None, ssf_scale=None, stop_at=None):
    """Momentum SGD for ``epochs`` passes. Returns params and a history dict.

    With ``stop_at`` set, stops once the denormalized SSF training MSE
    (column 0 scaled by ``ssf_scale**2``) drops to or below it.
    """
    vel_w = [np.zeros_like(w) for w in params.weights]
    vel_b = [np.zeros_like(b) for b in params.biases]
    hist = {"train_loss": [], "val_loss": [], "train_ssf_mse": []}
    n = len(X)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            g = backprop(params, X[idx], Y[idx], cfg.l2_lambda)
            for i in range(len(params.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] - cfg.learning_rate * g.weights[i]
                vel_b[i] = cfg.momentum * vel_b[i] - cfg.learning_rate * g.biases[i]
                params.weights[i] += vel_w[i]
                params.biases[i] += vel_b[i]
        with np.errstate(over="ignore", invalid="ignore"):
            err = forward(params, X) - Y
            tr = float(np.mean(err * err))
        if not math.isfinite(tr) or not params.is_finite():
            raise TrainingDivergedError(epoch)
        hist["train_loss"].append(tr)
        if ssf_scale is not None:
            hist["train_ssf_mse"].append(float(np.mean(err[:, 0] ** 2)) * ssf_scale**2)
        if val is not None:
            verr = forward(params, val[0]) - val[1]
            hist["val_loss"].append(float(np.mean(verr * verr)))
        if stop_at is not None and hist["train_ssf_mse"][-1] <= stop_at:
            break
    return params, hist


def fit_network(X, Y, groups, cfg: TrainConfig, ssf_scale: float = 1.0):
    """Pick an epoch count by k-fold CV over episode groups, then retrain on
    everything, stopping early at ``cfg.target_mse``.

    Returns ``(params, history)``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) == 0:
        raise ValueError("empty training set")
    sizes = [X.shape[1], *cfg.hidden, Y.shape[1]]
    seq = np.random.SeedSequence(cfg.seed)
    split_seq, final_seq, *fold_seqs = seq.spawn(2 + cfg.k_folds)

    k = min(cfg.k_folds, len(np.unique(groups)))
    curves = []
    if k >= 2:
        for (tr, va), fseq in zip(kfold_groups(groups, k, np.random.default_rng(split_seq)), fold_seqs):
            rng = np.random.default_rng(fseq)
            p = init_params(sizes, rng)
            _, h = _sgd(p, X[tr], Y[tr], cfg, cfg.max_epochs, rng, val=(X[va], Y[va]))
            curves.append(h["val_loss"])
        mean_val = np.mean(curves, axis=0)
        epochs = int(np.argmin(mean_val)) + 1
    else:
        mean_val = np.array([])
        epochs = cfg.max_epochs

    rng = np.random.default_rng(final_seq)
    params = init_params(sizes, rng)
    stop_at = cfg.target_mse if math.isfinite(cfg.target_mse) else None
    params, h = _sgd(params, X, Y, cfg, epochs, rng, ssf_scale=ssf_scale, stop_at=stop_at)
    history = {
        "cv_folds": k,
        "cv_val_loss": [float(v) for v in mean_val],
        "selected_epochs": epochs,
        "train_loss": h["train_loss"],
        "train_ssf_mse": h["train_ssf_mse"],
    }
    return params, history


@dataclass(eq=True)
class TrainedTwin:
    params: NetworkParams
    features: tuple[str, ...]
    norm_stats: NormStats
    outputs: tuple[str, ...] = OUTPUTS
    regime: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)
    surrogate_signs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = tuple(self.features)
        self.outputs = tuple(self.outputs)
        if self.outputs[0] != OUTPUTS[0] or set(self.outputs[1:]) != set(SURROGATES):
            raise ValueError(f"twin outputs must be the SSF followed by {SURROGATES}")
        if self.params.layer_sizes[0] != len(self.features) or self.params.layer_sizes[-1] != len(self.outputs):
            raise ValueError("network shape does not match features/outputs")

    @property
    def name(self) -> str:
        return self.regime.get("name", "twin")

    def predict_raw(self, X_raw) -> np.ndarray:
        """Outputs in physical units from un-normalized input rows."""
        z = normalize(X_raw, self.norm_stats, self.features)
        return denormalize(forward(self.params, z), self.norm_stats, self.outputs)

    def predict(self, episode: Episode) -> np.ndarray:
        """``(n_steps, len(outputs))`` predictions in physical units."""
        missing = [f for f in self.features if f not in episode.channels]
        if missing:
            raise KeyError(f"episode lacks twin input channels {missing}")
        return self.predict_raw(episode.matrix(self.features))


def twin_inputs(features: Sequence[str], exclude_surrogates: bool = True) -> list[str]:
    if not exclude_surrogates:
        return list(features)
    return [f for f in features if f not in SURROGATES]


def train_twin(
    subset: Dataset,
    cfg: TrainConfig,
    regime: dict | None = None,
    inputs: Sequence[str] | None = None,
    stride: int = 1,
) -> TrainedTwin:
    """Train one digital twin on ``subset`` (which must carry Train stats)."""
    if not len(subset):
        raise ValueError("cannot train a twin on an empty subset")
    inputs = list(inputs) if inputs is not None else twin_inputs(subset.feature_names)
    X, Y, groups = supervised_arrays(subset, inputs, stride)
    params, history = fit_network(X, Y, groups, cfg, ssf_scale=subset.norm_stats[OUTPUTS[0]][1])
    stats = {k: subset.norm_stats[k] for k in dict.fromkeys([*inputs, *OUTPUTS])}
    return TrainedTwin(params, tuple(inputs), stats, OUTPUTS, dict(regime or {}), history, dict(subset.surrogate_signs))


# -- library -----------------------------------------------------------------


def twin_to_dict(twin: TrainedTwin) -> dict:
    return {
        "schema_version": LIBRARY_SCHEMA,
        "features": list(twin.features),
        "outputs": list(twin.outputs),
        "norm_stats": {k: list(v) for k, v in twin.norm_stats.items()},
        "regime": twin.regime,
        "history": twin.history,
        "surrogate_signs": twin.surrogate_signs,
        "weights": [w.tolist() for w in twin.params.weights],
        "biases": [b.tolist() for b in twin.params.biases],
    }


def twin_from_dict(d: dict) -> TrainedTwin:
    if d.get("schema_version") != LIBRARY_SCHEMA:
        raise LibraryError(f"twin schema version {d.get('schema_version')!r}, expected {LIBRARY_SCHEMA}")
    params = NetworkParams(
        [np.array(w, dtype=float).reshape(len(w), -1) for w in d["weights"]],
        [np.array(b, dtype=float) for b in d["biases"]],
    )
    return TrainedTwin(
        params,
        tuple(d["features"]),
        {k: (v[0], v[1]) for k, v in d["norm_stats"].items()},
        tuple(d["outputs"]),
        d["regime"],
        d["history"],
        d.get("surrogate_signs", {}),
    )


def save_library(twins: Sequence[TrainedTwin], path) -> Path:
    """One JSON document per twin plus ``index.json``. Floats are written with
    ``repr`` precision, which round-trips binary64 exactly."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = []
    for i, twin in enumerate(twins):
        name = f"twin_{i:03d}.json"
        (path / name).write_text(json.dumps(twin_to_dict(twin)))
        files.append(name)
    index = {"schema_version": LIBRARY_SCHEMA, "twins": files}
    (path / "index.json").write_text(json.dumps(index, indent=2))
    return path


def load_library(path) -> list[TrainedTwin]:
    path = Path(path)
    index_path = path / "index.json"
    if not index_path.exists():
        raise EmptyLibraryError(f"no twin library at {path}")
    try:
        index = json.loads(index_path.read_text())
    except json.JSONDecodeError as exc:
        raise LibraryError(f"{index_path}: corrupt index ({exc})") from exc
    if index.get("schema_version") != LIBRARY_SCHEMA:
        raise LibraryError(f"library schema version {index.get('schema_version')!r}, expected {LIBRARY_SCHEMA}")
    if not index.get("twins"):
        raise EmptyLibraryError(f"library at {path} holds no twins")
    twins = []
    for name in index["twins"]:
        try:
            twins.append(twin_from_dict(json.loads((path / name).read_text())))
        except (OSError, json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise LibraryError(f"{path / name}: corrupt twin file ({exc})") from exc
    return twins
