"""
HALP with an integer-only inner loop
====================================

For linear models the inner loop only needs a dot product, a scalar
derivative, and a scaled copy of the example.  With the examples stored in
8 bits, every vector operation inside the loop can be done on integer codes.
"""
import numpy as np

from halp import Objective, OptimizerConfig, make_classification, quantize_dataset, run_lm_halp
from halp.fixed_point import count_ops

ds = quantize_dataset(make_classification(2000, 20, n_classes=4, separation=3.0, seed=0), 8, seed=0)
obj = Objective(ds, "softmax", l2=1e-3)
print("examples stored with", ds.quantized.repr)

cfg = OptimizerConfig("lm-halp", alpha=0.02, epochs=8, bits=8, mu=0.5)
with count_ops() as log:
    rec = run_lm_halp(obj, cfg)

for row in rec.rows:
    print(f"pass {row.passes:4.0f}   loss {row.loss:.5f}   grad norm {row.grad_norm:.2e}")

# The scales are chosen so that the scalar scale times the data scale equals
# the accumulator scale exactly, with no rounding.
for k, s in enumerate(rec.scales):
    print(f"epoch {k}: delta_s*delta_d == delta_i: {s['delta_s'] * s['delta_d'] == s['delta_i']}")

# Which operations ran where?  Phase markers split the log.
phase, counts = None, {}
for kind, name in log:
    if kind == "phase":
        phase = name
        continue
    counts[(phase, kind)] = counts.get((phase, kind), 0) + 1
print("operation counts by (phase, kind):", counts)

pred = np.argmax(obj.dataset.X @ rec.final, axis=1)
print("training accuracy:", np.mean(pred == ds.y))
