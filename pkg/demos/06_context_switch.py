"""An unannounced control action mid-transient.

At t = 120 s pump 2 is ramped up while pump 1 is still coasting down. The
ensemble gets no notice; it only sees the sensors change, and the voting
weights move to whichever twins now track the surrogates best.
"""

import numpy as np

from eddm.config import ci_config
from eddm.harness import build_context, context_switch_experiment
from eddm.plant import ControlAction, PumpProfile

ctx = build_context(ci_config(0))
library = ctx.library(("Train",), 0.05)
switch = ControlAction("context_switch", 120.0, 1.3, 60.0)
base, switched = context_switch_experiment(library, PumpProfile(w_end=0.7), switch, ctx.config)

for run in (base, switched):
    print(f"{run.label:9s} MSE {run.mse:6.2f}  post-switch max |err| {run.post_switch_max_abs_error:5.1f} C  within 10 C: {run.within_margin}")
    print("          per-twin MSE before", np.round(run.per_twin_mse_before, 1), "after", np.round(run.per_twin_mse_after, 1))

for t in (100.0, 120.0, 140.0, 300.0):
    i = int(t / ctx.config.plant.dt)
    print(f"t={t:5.0f}s  baseline weights {np.round(base.steps[i].weights, 2)}  switched {np.round(switched.steps[i].weights, 2)}")
