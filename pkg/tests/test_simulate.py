import math

import numpy as np
import pytest

from l1margin.l1ctrl import StepGuardError
from l1margin.linsys import freq_response, hbar_realization, ss_to_tf
from l1margin.margins import closed_filter
from l1margin.simulate import (DelayLine, Scenario, Signal, empirical_delay_margin,
                               simulate_closed_loop, simulate_lti_delayed, simulate_reference,
                               stability_probe, verify_equivalence)

from conftest import A_M, B, THETA, arm_config, arm_scenario


def steady_state_phasor(t, y, w):
    """Least-squares fit y ~ a sin(wt) + b cos(wt) over the given samples."""
    M = np.column_stack([np.sin(w * t), np.cos(w * t)])
    a, b = np.linalg.lstsq(M, y, rcond=None)[0]
    return complex(a, b)  # phasor relative to sin(wt)


def ref_response(w, omega=1.0, k=60.0, kg=1.0):
    """x/r = kg Hbar C / (1 + C theta^T Hbar), first state."""
    Hb = hbar_realization(A_M, B, THETA)
    h1 = freq_response(ss_to_tf(Hb, 0), w)
    th = freq_response(ss_to_tf(type(Hb)(Hb.A, Hb.B, THETA)), w)
    C = freq_response(closed_filter(omega, k), w)
    return kg * h1 * C / (1 + C * th), h1 * (1 - C) / (1 + C * th)


def test_zero_scenario_is_identically_zero():
    sc = arm_scenario(sigma=Signal.zero(), r=Signal.zero(), tau=0.02, t_end=0.5)
    tr = simulate_closed_loop(sc)
    assert tr.status == "ok" and np.all(tr.x == 0) and np.all(tr.u == 0)
    assert np.all(simulate_reference(sc).x == 0)
    lti = simulate_lti_delayed(sc, np.zeros(sc.steps + 1))
    assert np.all(lti.x == 0)
    rep = verify_equivalence(tr, sc)
    assert rep.x_residual == 0 and rep.u_residual == 0


def test_reference_step_dc_tracking():
    sc = arm_scenario(sigma=Signal.zero(), r=Signal.step(1.0), h=1e-3, t_end=40.0)
    tr = simulate_reference(sc)
    assert tr.x[-1, 0] == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("w", [0.3, 1.0, 3.0])
def test_reference_frequency_response(w):
    h, t_end = 1e-3, 60.0
    base = arm_scenario(h=h, t_end=t_end)
    tail = slice(int(40.0 / h), None)
    exp_r, exp_s = ref_response(w)
    tr = simulate_reference(base.with_(sigma=Signal.zero(), r=Signal.sinusoid(1.0, w)))
    got = steady_state_phasor(tr.t[tail], tr.x[tail, 0], w)
    assert abs(got - exp_r) <= 0.01 * abs(exp_r)
    tr = simulate_reference(base.with_(sigma=Signal.sinusoid(1.0, w), r=Signal.zero()))
    got = steady_state_phasor(tr.t[tail], tr.x[tail, 0], w)
    assert abs(got - exp_s) <= 0.01 * abs(exp_s)


@pytest.mark.parametrize("w", [0.5, 2.0])
def test_lti_loop_without_delay_matches_reference_transfer(w):
    h, t_end = 1e-3, 60.0
    base = arm_scenario(h=h, t_end=t_end)
    tail = slice(int(40.0 / h), None)
    exp_r, exp_s = ref_response(w)
    zero = np.zeros(base.steps + 1)
    tr = simulate_lti_delayed(base.with_(sigma=Signal.zero(), r=Signal.sinusoid(1.0, w)), zero)
    got = steady_state_phasor(tr.t[tail], tr.x[tail, 0], w)
    assert abs(got - exp_r) <= 0.01 * abs(exp_r)
    tr = simulate_lti_delayed(base.with_(sigma=Signal.sinusoid(1.0, w), r=Signal.zero()), zero)
    got = steady_state_phasor(tr.t[tail], tr.x[tail, 0], w)
    assert abs(got - exp_s) <= 0.01 * abs(exp_s)
    # eta_l vanishes without delay
    assert np.abs(tr.extra["eta_l"]).max() <= 1e-12


def test_lti_requires_zero_initial_state():
    sc = arm_scenario(t_end=0.1, x0=[0.1, 0.0])
    with pytest.raises(ValueError):
        simulate_lti_delayed(sc, np.zeros(sc.steps + 1))


def test_equivalence_short_horizon():
    for tau, tol in ((0.0, 1e-4), (0.02, 1e-3)):
        sc = arm_scenario(tau=tau, t_end=2.0)
        rep = verify_equivalence(simulate_closed_loop(sc), sc)
        assert rep.x_relative <= tol and rep.u_relative <= tol


def test_equivalence_grid_mismatch():
    sc = arm_scenario(t_end=0.2)
    tr = simulate_closed_loop(sc.with_(record_every=2))
    with pytest.raises(ValueError):
        verify_equivalence(tr, sc)


@pytest.mark.parametrize("tau", [0.0, 0.02])
def test_rk4_fourth_order(tau):
    # projection is only Lipschitz, so keep every estimate off its box faces
    cfg = arm_config(gamma_c=100.0)
    lo, hi = cfg.sets.estimate_bounds()
    finals = []
    for h in (4e-3, 2e-3, 1e-3, 5e-4):
        tr = simulate_closed_loop(arm_scenario(cfg=cfg, h=h, t_end=1.0, tau=tau, sigma=Signal.zero()))
        est = np.column_stack([tr.theta_hat, tr.sigma_hat, tr.omega_hat])
        assert np.all(est > lo) and np.all(est < hi)
        finals.append(np.concatenate([tr.x[-1], tr.xhat[-1], est[-1], [tr.u[-1]]]))
    d = [np.abs(finals[i] - finals[i + 1]).max() for i in range(3)]
    assert d[0] / d[1] > 12 and d[1] / d[2] > 12


def test_delay_line_rounding():
    dl = DelayLine(0.0203, 1e-3)
    assert dl.depth == 20 and dl.tau_eff == pytest.approx(0.020)
    out = dl.run(np.arange(30.0))
    assert np.all(out[:20] == 0) and np.all(out[20:] == np.arange(10.0))
    assert np.all(DelayLine(0.0, 1e-3).run([1.0, 2.0]) == [1.0, 2.0])


def test_guard_and_scenario_validation():
    sc = arm_scenario(cfg=arm_config(gamma_c=1e9), h=1e-3, t_end=1.0)
    assert simulate_closed_loop(sc).status == "guard"
    with pytest.raises(StepGuardError):
        simulate_closed_loop(sc, raise_on_guard=True)
    with pytest.raises(ValueError, match="d_sigma"):
        arm_scenario(sigma=Signal.sinusoid(1.0, 10.0))
    with pytest.raises(ValueError, match="delta0"):
        arm_scenario(sigma=Signal.constant(20.0))
    with pytest.raises(ValueError):
        Scenario(arm_config(), [20.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        Scenario(arm_config(), THETA, 10.0)


def test_csv_export(tmp_path):
    sc = arm_scenario(t_end=0.01, tau=0.002)
    tr = simulate_closed_loop(sc)
    tr.to_csv(tmp_path / "a.csv")
    tr.to_csv(tmp_path / "b.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == ("t,x1,x2,xhat1,xhat2,u,thetahat1,thetahat2,sigmahat,omegahat,"
                        "r,sigma,rtilde")
    assert len(lines) == sc.steps + 2
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_predictor_error_bound_on_desk_trace(desk):
    from l1margin.margins import transient_bounds
    tr = simulate_closed_loop(desk)
    bound = transient_bounds(desk.cfg, theta=desk.true_theta, omega=desk.true_omega)
    assert np.abs(tr.xtilde).max() <= bound.xtilde_bound
    # estimates stay in their boxes along the whole run
    lo, hi = desk.cfg.sets.estimate_bounds()
    est = np.column_stack([tr.theta_hat, tr.sigma_hat, tr.omega_hat])
    assert np.all(est >= lo) and np.all(est <= hi)


def test_probe_far_beyond_margin_diverges(desk):
    v = stability_probe(desk, 1.0)
    assert v.classification == "diverged" and v.divergence_time is not None


def test_empirical_margin_precondition():
    sc = arm_scenario(t_end=1.0)
    with pytest.raises(ValueError, match="precondition"):
        empirical_delay_margin(sc, 0.005)
