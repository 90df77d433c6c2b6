"""
Fixed-point lattices and stochastic rounding
============================================

A representation (delta, bits) is a grid of 2**bits evenly spaced values
around zero.  Quantizing onto it rounds up or down at random so that the
result is right on average.
"""
import numpy as np

from halp import LPRepr, QuantRng, quantize_vector, to_real
from halp.fixed_point import add_same_scale, mul_scalar, quantize_scalar, widen_shift

# A 3-bit lattice with spacing 0.5 holds eight values.
rep = LPRepr(0.5, 3)
print("lattice:", rep.lattice())
print("range:", rep.min_value, "to", rep.max_value)

# 0.8 lies between 0.5 and 1.0, 60% of the way up, so it should round up
# about 60% of the time and the average should come back to 0.8.
rng = QuantRng(0)
q = quantize_vector(np.full(100_000, 0.8), rep, rng)
vals = to_real(q)
print("fraction rounded up:", np.mean(vals == 1.0))
print("mean of quantized values:", vals.mean())

# The variance is p(1-p) delta**2, largest (delta**2 / 4) halfway between points.
for x in (0.55, 0.75, 0.95):
    v = to_real(quantize_vector(np.full(100_000, x), rep, rng)).var()
    print(f"x={x}: variance {v:.4f}   bound {rep.delta ** 2 / 4:.4f}")

# Values outside the range saturate instead of wrapping around.
print("quantize(9.0) ->", quantize_scalar(9.0, rep, rng).value)

# Arithmetic happens on the integer codes.  Same-scale sums saturate,
# products multiply the scales, and a left shift refines the scale without
# changing any value.
a = quantize_vector(np.array([1.0, -0.5, 1.5]), rep, rng)
print("a + a =", to_real(add_same_scale(a, a)))
s = quantize_scalar(0.25, LPRepr(0.125, 4), rng)
prod = mul_scalar(a, s)
print("a * 0.25 =", to_real(prod), "stored with", prod.repr)
wide = widen_shift(a, 5)
print("a << 5 has codes", wide.codes, "and the same values", to_real(wide))
