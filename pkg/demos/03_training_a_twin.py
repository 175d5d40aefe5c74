"""Training one digital twin.

A twin is a 32-32-16 ReLU network mapping the selected sensors at one
instant to the fuel temperature and the two surrogate channels. Five-fold
cross-validation over whole episodes picks the epoch count, then the net is
retrained on everything and stopped once the fuel-temperature MSE drops to
the target.
"""

from dataclasses import replace

import numpy as np

from eddm.dataset import TRAIN_PLAN, INTP_PLAN, build_dataset, prepare
from eddm.fnn import TrainConfig, train_twin
from eddm.harness import episode_mse
from eddm.plant import PlantConfig

plant = PlantConfig(dt=2.0, n_steps=500)
train = build_dataset(replace(TRAIN_PLAN, sample_count=40), plant)
intp = build_dataset(replace(INTP_PLAN, sample_count=8), plant)
train, intp = prepare(train, [intp])

twin = train_twin(train.subset(range(10)), TrainConfig(max_epochs=150, seed=0))
h = twin.history
print("inputs:", twin.features)
print(f"CV picked {h['selected_epochs']} epochs; final run used {len(h['train_loss'])}")
print(f"training SSF MSE {h['train_ssf_mse'][-1]:.2f} C^2")

mses = [episode_mse(twin.predict(ep)[:, 0], ep.ssf) for ep in intp.episodes]
print("Intp episode MSE:", np.round(mses, 2))
