"""Probabilistic voting over a twin library.

Six twins each see one slice of the severity range. At every step each twin
is scored by a PID-style error between the surrogates it predicts and the
ones measured; errors become weights through -log of each twin's share of
the total error. The weighted fuel temperature follows whichever twins track
the plant.
"""

import numpy as np

from eddm.config import ci_config
from eddm.harness import build_context, per_twin_breakdown
from eddm.pva import run_ensemble

ctx = build_context(ci_config(0))
library = ctx.library(("Train",), 0.05)
for twin in library:
    lo, hi = twin.regime["w_end_range"]
    print(f"{twin.name}: w_end {lo:.1f}-{hi:.1f} %")

ep = ctx.datasets["Intp"].episodes[0]
print(f"\nIntp episode with w_end = {100 * ep.profile.w_end:.1f} %")
per_twin, ens = per_twin_breakdown(library, ep, ctx.config)
print("per-twin MSE:", np.round(per_twin, 2), f" ensemble: {ens:.2f}")

steps = run_ensemble(library, ep, ctx.config.tracking)
for i in (0, 100, 250, 499):
    s = steps[i]
    print(f"t={s.t:6.0f}s  weights {np.round(s.weights, 2)}  y_hat {s.y_hat:7.1f}  truth {s.ssf_true:7.1f}")
