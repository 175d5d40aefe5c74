"""Ensemble of data-driven digital twins with probabilistic voting, for
diagnosing an unmeasured safety variable during pump-degradation transients."""

from .config import EddmConfig, ci_config, load_config
from .dataset import Dataset, RegimePartition, SamplingPlan, build_dataset, prepare, select_features
from .fnn import TrainConfig, TrainedTwin, load_library, save_library, train_twin
from .harness import ExperimentSpec, EvalReport, build_context, context_switch_experiment, episode_mse, excursions, per_twin_breakdown, run_case
from .plant import ControlAction, Episode, PlantConfig, PumpProfile, inject_context_switch, simulate_episode
from .pva import TrackingConfig, run_ensemble, weights_from_errors

__version__ = "0.1.0"
