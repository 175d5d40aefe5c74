"""Datasets and feature selection.

Train and Intp episodes share the same severity range; Extp episodes are
harsher than anything in Train. Channels whose pooled correlation with the
fuel temperature reaches 0.7 are kept as features, plus pump-1 speed.
"""

from dataclasses import replace

from eddm.dataset import EXTP_PLAN, TRAIN_PLAN, build_dataset, pooled_correlations, prepare
from eddm.plant import PlantConfig

plant = PlantConfig(dt=2.0, n_steps=500)
train = build_dataset(replace(TRAIN_PLAN, sample_count=64), plant)
extp = build_dataset(replace(EXTP_PLAN, sample_count=16), plant)
print(f"Train w_end: {train.w_ends().min():.1f}-{train.w_ends().max():.1f} %")
print(f"Extp  w_end: {extp.w_ends().min():.1f}-{extp.w_ends().max():.1f} %\n")

rho = pooled_correlations(train)
for name, r in sorted(rho.items(), key=lambda kv: -abs(kv[1])):
    print(f"  {name:26s} {r:+.3f}")

train, extp = prepare(train, [extp])
print("\nselected:", train.feature_names)
print("surrogate orientation:", train.surrogate_signs)

# Extp inputs sit far outside the Train scaling
mean, std = train.norm_stats["pump1_speed"]
z = (extp.episodes[0].channels["pump1_speed"][-1] - mean) / std
print(f"\nfinal pump-1 speed of an Extp episode in Train z-units: {z:.1f}")
