"""
Low precision and the accuracy floor
====================================

Linear regression with 1000 examples and 100 features.  The fixed-point
versions of SGD and SVRG stall at a floor set by their lattice spacing;
HALP re-centres and re-scales its lattice every outer iteration and keeps
converging.  Writes one CSV trace per algorithm to ./comparison_traces.
"""
import numpy as np

from halp import comparison_spec, run_experiment
from halp.harness import run_label

# 25 outer iterations of 2000 inner steps each = 50 passes over the data.
spec = comparison_spec(epochs=25, output="comparison_traces")
manifest = run_experiment(spec)

print(f"{'algorithm':<12} {'start':>10} {'after 10':>10} {'after 50':>10}")
for cfg, rec in zip(spec.configs, manifest["records"]):
    g = rec.grad_norms
    passes = rec.column("passes")
    at10 = g[np.searchsorted(passes, 10)]
    print(f"{run_label(cfg):<12} {g[0]:10.2e} {at10:10.2e} {g[-1]:10.2e}")

# SVRG keeps improving, LP-SVRG-16 stops around 1e-1 and LP-SVRG-8 around
# 3e1, while HALP at both widths keeps close to the full-precision rate.
# The SGD family runs at a much smaller step and barely moves in 50 passes.
