"""
Margins of the robot-arm loop
=============================

Load the bundled robot-arm scenario, look at the loop transfer function of
the adaptive controller's LTI limit, and read off its phase, delay and gain
margins. Then sweep the uncertainty box for the worst case.
"""

import numpy as np

from l1margin.margins import analyze, check_l1_condition, open_loop_Ho, phase_margin
from l1margin.scenario_file import bundled_path, load_scenario

sc = load_scenario(bundled_path(), "desk").build()
cfg = sc.cfg
print("theta =", sc.true_theta, " omega =", sc.true_omega, " k =", cfg.k)

# %%
# The loop transfer function. With D(s) = 1/s it is a scaled integrator times
# 1 + theta^T Hbar(s), so the crossover sits close to omega * k.

Ho = open_loop_Ho(cfg.A_m, cfg.b, sc.true_theta, sc.true_omega, cfg.k)
for w in (1.0, 10.0, 60.0, 600.0):
    g = Ho(1j * w)
    print(f"w = {w:6.1f}  |Ho| = {abs(g):9.4f}  phase = {np.degrees(np.angle(g)):8.2f} deg")

pm, wc = phase_margin(Ho)
print(f"phase margin {np.degrees(pm):.2f} deg at {wc:.2f} rad/s, delay margin {pm / wc:.5f} s")

# %%
# The L1 condition ||G||_L1 * L < 1 decides whether the transient bounds
# apply. It depends on the input gain: with k = 60 it holds at the true gain
# but not at the low end of the gain set.

for omega in (1.0, cfg.sets.omega0[0]):
    value, holds = check_l1_condition(cfg.A_m, cfg.b, cfg.sets.theta_box, (omega, omega),
                                      cfg.k, cfg.D)
    print(f"omega = {omega}: ||G|| L = {value:.3f} holds={holds}")

# %%
# Worst case over the box. A coarse 5 x 5 grid already finds the corner that
# limits the delay margin; the default density is 21 per axis.

rep = analyze(cfg, sc.true_theta, sc.true_omega, sweep=True, grid_density=5)
w = rep.worst
print(f"worst delay margin {w.delay_margin:.5f} s at theta = {list(w.theta)}, omega = {w.omega}")
print("gain margin interval", rep.gain_margin_interval)
