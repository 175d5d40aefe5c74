"""Ensemble against single networks under different data coverage.

Reproduces the six-row comparison at a reduced scale. Single-model rows are
repeated with fresh seeds and carry mean +- 1.96 sample-std capture bounds.
Expect several minutes on one core; the smoke configuration runs in seconds.
"""

import sys

from eddm.config import ci_config, load_config
from eddm.harness import build_context, run_case, comparison_specs

cfg = load_config(sys.argv[1]) if len(sys.argv) > 1 else ci_config(0)
ctx = build_context(cfg)
print(f"{'case':4s} {'model':28s} {'Intp MSE':>22s} {'Extp MSE':>22s}")
for spec in comparison_specs(cfg):
    rep = run_case(spec, ctx)
    cells = []
    for label in ("Intp", "Extp"):
        r = rep.results[label]
        bounds = f" [{r.capture[0]:.1f}, {r.capture[1]:.1f}]" if r.capture else ""
        cells.append(f"{r.mean_mse:.2f}{bounds}")
    print(f"{spec.case_id:4s} {spec.name:28s} {cells[0]:>22s} {cells[1]:>22s}")
