"""
Transient bounds and the adaptation gain
========================================

The transient bounds shrink like one over the square root of the adaptation
gain. Here we evaluate them, check them against simulated traces and watch
the gap to the reference system close as the gain grows.
"""

import numpy as np

from l1margin.margins import transient_bounds
from l1margin.scenario_file import bundled_path, load_scenario
from l1margin.simulate import simulate_closed_loop, simulate_reference

sc = load_scenario(bundled_path(), "desk").build(t_end=4.0)
cfg = sc.cfg

# %%
# Bounds at the true parameters. theta_m collects the worst-case parameter
# error energy; both the predictor-error bound and gamma1 scale with
# sqrt(theta_m / Gamma_c).

b = transient_bounds(cfg, theta=sc.true_theta, omega=sc.true_omega)
print(f"theta_m = {b.theta_m:.4g}")
print(f"||x_hat - x|| bound = {b.xtilde_bound:.4g}, gamma1 = {b.gamma1:.4g}")
if b.gamma2 is not None:
    print(f"gamma2 = {b.gamma2:.4g} (output c_o = {b.c_o})")

# %%
# Quadrupling Gamma_c halves gamma1 exactly.

b4 = transient_bounds(cfg.with_gain(4 * cfg.gamma_c), theta=sc.true_theta, omega=sc.true_omega)
print(f"gamma1 ratio under 4x Gamma_c: {b.gamma1 / b4.gamma1:.12f}")

# %%
# Simulated gap to the reference system. The bounds are far from tight, but
# the measured gap shrinks with the gain as they predict.

ref = simulate_reference(sc)
print(" Gamma_c   max|x - x_ref|   gamma1   max|x_hat - x|   bound")
for g in (1e3, 1e4, 1e5):
    run = sc.with_(cfg=cfg.with_gain(g))
    tr = simulate_closed_loop(run)
    bg = transient_bounds(run.cfg, theta=sc.true_theta, omega=sc.true_omega)
    print(f"{g:8.0e}   {np.abs(tr.x - ref.x).max():14.3e}   {bg.gamma1:6.2f}"
          f"   {np.abs(tr.xtilde).max():14.3e}   {bg.xtilde_bound:6.2f}")
