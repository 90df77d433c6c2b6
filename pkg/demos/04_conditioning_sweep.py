"""
How conditioning limits low-precision HALP
==========================================

On least-squares problems with a Hessian spectrum spanning [1, kappa], each
algorithm gets its best step size (and HALP its best mu) from a grid.  At
8 bits HALP eventually falls well behind SVRG as kappa grows; 16 bits holds
out longer.  This takes a few minutes.
"""
from halp import conditioning_sweep, degradation_threshold

kappas = [1, 4, 16, 64, 256, 1024]
rows = conditioning_sweep(kappas, bits_list=(16, 8), inner=1000, epochs=50,
                          output="conditioning_sweep.csv")

best = {(r["kappa"], r["algorithm"], r["bits"]): r["grad_norm"] for r in rows}
print(f"{'kappa':>6} {'SVRG':>10} {'HALP-16':>10} {'HALP-8':>10}")
for k in kappas:
    print(f"{k:6g} {best[k, 'svrg', 64]:10.2e} {best[k, 'halp', 16]:10.2e} {best[k, 'halp', 8]:10.2e}")

print("kappa where HALP-8 is 10x worse than SVRG:", degradation_threshold(rows, 8))
print("kappa where HALP-16 is 10x worse than SVRG:", degradation_threshold(rows, 16))
