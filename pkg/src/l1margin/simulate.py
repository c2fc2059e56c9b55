"""Closed-loop simulation engines.

* :func:`simulate_closed_loop` -- the adaptive loop, controller fed the
  state delayed by ``tau`` and the plant input scaled by a loop gain ``g``.
* :func:`simulate_reference` -- the non-adaptive reference loop built from
  the true parameters.
* :func:`simulate_lti_delayed` -- the LTI loop whose output ``zeta_l`` is
  delayed and which is driven by an exogenous signal ``r_tilde``.
* :func:`verify_equivalence` -- drives the LTI loop with the ``r_tilde``
  recorded from an adaptive run and measures trajectory mismatch.
* :func:`stability_probe` / :func:`empirical_delay_margin` -- empirical
  stability classification and delay-margin bracketing.

All engines use fixed-step RK4 on one grid; delays are rounded to a whole
number of steps.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .l1ctrl import ControllerConfig, ControllerState, StepGuardError

__all__ = [
    "Signal",
    "Scenario",
    "DelayLine",
    "SimTrace",
    "StabilityVerdict",
    "EquivalenceReport",
    "simulate_closed_loop",
    "simulate_reference",
    "simulate_lti_delayed",
    "verify_equivalence",
    "stability_probe",
    "empirical_delay_margin",
]

BLOWUP = 1e6
ENVELOPE_FACTOR = 50.0
GUARD_FRACTION = 0.2

_KINDS = {"zero": _kernels.SIG_ZERO, "constant": _kernels.SIG_CONST,
          "sinusoid": _kernels.SIG_SIN, "step": _kernels.SIG_STEP}


@dataclass(frozen=True)
class Signal:
    """Catalog signal.

    ``zero``; ``constant`` (amplitude); ``sinusoid``
    ``amplitude * sin(frequency * t + phase)`` with frequency in rad/s;
    ``step`` (amplitude from ``t0`` on).
    """

    kind: str = "zero"
    amplitude: float = 0.0
    frequency: float = 0.0
    phase: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}; expected one of {sorted(_KINDS)}")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, value):
        return cls("constant", amplitude=value)

    @classmethod
    def sinusoid(cls, amplitude, frequency, phase=0.0):
        return cls("sinusoid", amplitude=amplitude, frequency=frequency, phase=phase)

    @classmethod
    def step(cls, amplitude=1.0, t0=0.0):
        return cls("step", amplitude=amplitude, t0=t0)

    def spec(self):
        if self.kind == "step":
            return np.array([_KINDS["step"], self.amplitude, self.t0, 0.0])
        return np.array([_KINDS[self.kind], self.amplitude, self.frequency, self.phase])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.amplitude)
        if self.kind == "sinusoid":
            return self.amplitude * np.sin(self.frequency * t + self.phase)
        if self.kind == "step":
            return np.where(t >= self.t0, self.amplitude, 0.0)
        return np.zeros_like(t)

    @property
    def sup(self):
        return 0.0 if self.kind == "zero" else abs(self.amplitude)

    @property
    def sup_rate(self):
        if self.kind == "sinusoid":
            return abs(self.amplitude * self.frequency)
        if self.kind == "step" and self.amplitude != 0:
            return math.inf
        return 0.0


@dataclass(frozen=True)
class Scenario:
    cfg: ControllerConfig
    true_theta: np.ndarray
    true_omega: float
    sigma: Signal = field(default_factory=Signal.zero)
    r: Signal = field(default_factory=Signal.zero)
    tau: float = 0.0
    gain: float = 1.0
    h: float = 1e-5
    t_end: float = 10.0
    x0: np.ndarray = None
    omega_hat0: float = None
    record_every: int = 1
    blowup: float = BLOWUP
    guard: float = GUARD_FRACTION

    def __post_init__(self):
        n = self.cfg.n
        theta = np.asarray(self.true_theta, dtype=float).ravel()
        x0 = np.zeros(n) if self.x0 is None else np.asarray(self.x0, dtype=float).ravel()
        object.__setattr__(self, "true_theta", theta)
        object.__setattr__(self, "x0", x0)
        sets = self.cfg.sets
        if theta.size != n or x0.size != n:
            raise ValueError("true_theta and x0 must have the plant order")
        box = sets.theta_box
        if np.any(theta < box[:, 0]) or np.any(theta > box[:, 1]):
            raise ValueError(f"true theta {theta} outside the declared box")
        if not sets.omega0[0] <= self.true_omega <= sets.omega0[1]:
            raise ValueError(f"true omega {self.true_omega} outside {sets.omega0}")
        if self.tau < 0 or self.h <= 0 or self.t_end <= 0 or self.gain <= 0:
            raise ValueError("need tau >= 0, h > 0, t_end > 0, gain > 0")
        if self.sigma.sup > sets.delta0 * (1 + 1e-12):
            raise ValueError(f"|sigma| may reach {self.sigma.sup} > delta0 = {sets.delta0}")
        if self.sigma.sup_rate > sets.d_sigma * (1 + 1e-12):
            raise ValueError(f"|sigma'| may reach {self.sigma.sup_rate} > d_sigma = {sets.d_sigma}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def steps(self):
        return int(round(self.t_end / self.h))

    @property
    def depth(self):
        return int(round(self.tau / self.h))

    @property
    def tau_eff(self):
        return self.depth * self.h

    @property
    def omega_eff(self):
        """Input gain seen by the plant, including the inserted loop gain."""
        return self.gain * self.true_omega

    def with_(self, **changes):
        return replace(self, **changes)


class DelayLine:
    """Ring buffer delaying a vector signal by ``depth`` grid steps.

    Output is zero until ``depth`` samples have been pushed.
    """

    def __init__(self, tau, h, width=1):
        if tau < 0 or h <= 0:
            raise ValueError("need tau >= 0 and h > 0")
        self.depth = int(round(tau / h))
        self.h = h
        self.tau_eff = self.depth * h
        self._buf = deque([np.zeros(width) for _ in range(self.depth)], maxlen=self.depth + 1)

    def push(self, value):
        """Insert the sample at the current grid point; return the delayed sample."""
        value = np.array(value, dtype=float, ndmin=1)
        self._buf.append(value)
        return self._buf[0] if self.depth else value

    def run(self, samples):
        samples = np.asarray(samples, dtype=float)
        flat = samples.ndim == 1
        out = np.array([self.push(s) for s in samples])
        return out[:, 0] if flat else out


@dataclass
class SimTrace:
    """Time-indexed record of one run.

    Unused channels are ``None`` (e.g. estimates in a reference run).
    ``x_d`` is the state the controller saw; ``xtilde = xhat - x_d``.
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    r: np.ndarray
    sigma: np.ndarray
    xhat: np.ndarray = None
    theta_hat: np.ndarray = None
    sigma_hat: np.ndarray = None
    omega_hat: np.ndarray = None
    x_d: np.ndarray = None
    xtilde: np.ndarray = None
    rtilde: np.ndarray = None
    eta: np.ndarray = None
    h: float = None
    record_every: int = 1
    tau_eff: float = 0.0
    status: str = "ok"
    status_time: float = None
    peak: float = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    @property
    def n(self):
        return self.x.shape[1]

    def columns(self):
        n = self.n
        header = ["t"] + [f"x{i + 1}" for i in range(n)]
        cols = [self.t[:, None], self.x]
        if self.xhat is not None:
            header += [f"xhat{i + 1}" for i in range(n)]
            cols.append(self.xhat)
        header.append("u")
        cols.append(self.u[:, None])
        if self.theta_hat is not None:
            header += [f"thetahat{i + 1}" for i in range(n)] + ["sigmahat", "omegahat"]
            cols += [self.theta_hat, self.sigma_hat[:, None], self.omega_hat[:, None]]
        header += ["r", "sigma"]
        cols += [self.r[:, None], self.sigma[:, None]]
        if self.rtilde is not None:
            header.append("rtilde")
            cols.append(self.rtilde[:, None])
        return header, np.hstack(cols)

    def to_csv(self, path, decimate=1):
        header, data = self.columns()
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in data[::decimate]:
                w.writerow([format(v + 0.0, ".12g") for v in row])


@dataclass(frozen=True)
class StabilityVerdict:
    classification: str
    peak: float
    divergence_time: float = None
    tau_eff: float = 0.0


@dataclass(frozen=True)
class EquivalenceReport:
    x_residual: float
    u_residual: float
    x_scale: float
    u_scale: float
    samples: int

    @property
    def x_relative(self):
        return self.x_residual / self.x_scale if self.x_scale > 0 else self.x_residual

    @property
    def u_relative(self):
        return self.u_residual / self.u_scale if self.u_scale > 0 else self.u_residual


_STATUS = {_kernels.STATUS_OK: "ok", _kernels.STATUS_DIVERGED: "diverged",
           _kernels.STATUS_GUARD: "guard"}


def simulate_closed_loop(sc: Scenario, raise_on_guard=False) -> SimTrace:
    """Co-integrate plant and adaptive controller (fed ``x_d``) with RK4.

    A run that exceeds the blow-up threshold stops with status
    ``"diverged"``; a step-guard violation stops with status ``"guard"`` (or
    raises :class:`StepGuardError` when ``raise_on_guard``).
    """
    cfg = sc.cfg
    n = cfg.n
    st0 = ControllerState.initial(cfg, sc.x0, omega_hat0=sc.omega_hat0)
    Z0 = np.concatenate([sc.x0, st0.to_vector()])
    T, Zr, XD, S, count, status, status_step, peak = _kernels.run_closed_loop(
        Z0, sc.steps, float(sc.h), sc.depth, int(sc.record_every), float(sc.blowup), float(sc.guard),
        sc.true_theta, float(sc.omega_eff), sc.sigma.spec(), sc.r.spec(),
        *cfg.kernel_args())
    status = _STATUS[status]
    if status == "guard" and raise_on_guard:
        raise StepGuardError(
            f"estimate update exceeded 0.2 box widths at t={status_step * sc.h:.6g}s "
            f"(h={sc.h}, gamma_c={cfg.gamma_c})")
    T, Zr, XD, S = T[:count], Zr[:count], XD[:count], S[:count]
    xhat = Zr[:, n:2 * n]
    return SimTrace(
        t=T, x=Zr[:, :n], u=S[:, _kernels.REC_U], r=S[:, _kernels.REC_R],
        sigma=S[:, _kernels.REC_SIGMA], xhat=xhat, theta_hat=Zr[:, 2 * n:3 * n],
        sigma_hat=S[:, _kernels.REC_SIGHAT], omega_hat=S[:, _kernels.REC_OMHAT],
        x_d=XD, xtilde=xhat - XD, rtilde=S[:, _kernels.REC_RTILDE], eta=S[:, _kernels.REC_ETA],
        h=sc.h, record_every=sc.record_every, tau_eff=sc.tau_eff, status=status,
        status_time=None if status_step < 0 else status_step * sc.h, peak=float(peak),
        extra={"chi": Zr[:, 3 * n + 2:]})


def simulate_reference(sc: Scenario) -> SimTrace:
    """Reference loop with true ``theta``/``omega`` and ``u_ref = C(s)/omega r_bar_ref``.

    Delay is ignored; the loop gain scales the true input gain.
    """
    cfg = sc.cfg
    n = cfg.n
    AD, bD, cD = cfg.d_realization
    Z0 = np.concatenate([sc.x0, np.zeros(cD.size)])
    T, Z, U = _kernels.run_reference(
        Z0, sc.steps, float(sc.h), int(sc.record_every), sc.true_theta, float(sc.omega_eff),
        sc.sigma.spec(), sc.r.spec(), cfg.A_m, cfg.b, float(cfg.kg), float(cfg.k), AD, bD, cD)
    return SimTrace(t=T, x=Z[:, :n], u=U, r=sc.r(T), sigma=sc.sigma(T), h=sc.h,
                    record_every=sc.record_every, peak=float(np.abs(Z[:, :n]).max()))


def _assert_loop_free(cfg: ControllerConfig):
    # The only instantaneous paths in the LTI loop run through C(s)/omega
    # (u_l filter and eps_l filter) and H_bar; the delay breaks nothing when
    # tau = 0, so both filters must be strictly proper.
    if not cfg.D.strictly_proper:
        raise ValueError("algebraic loop: C(s)/omega must be strictly proper")


def simulate_lti_delayed(sc: Scenario, r_tilde) -> SimTrace:
    """Delayed LTI loop from zero initial conditions driven by ``r_tilde``.

    ``r_tilde`` must be sampled on the full scenario grid (``steps + 1``
    samples). The returned trace's ``x`` is ``x_l``, ``u`` is ``u_l``;
    ``extra`` holds ``eps_l``, ``zeta_l``, ``zeta_ld`` and ``eta_l``.
    """
    r_tilde = np.asarray(r_tilde, dtype=float).ravel()
    steps = r_tilde.size - 1
    if steps < 1:
        raise ValueError("r_tilde needs at least two samples")
    if np.any(sc.x0 != 0):
        raise ValueError("the delayed LTI loop starts from zero initial conditions")
    cfg = sc.cfg
    _assert_loop_free(cfg)
    n = cfg.n
    AD, bD, cD = cfg.d_realization
    Z, S = _kernels.run_lti_delayed(
        steps, float(sc.h), sc.depth, r_tilde, sc.true_theta, float(sc.omega_eff),
        sc.sigma.spec(), sc.r.spec(), cfg.A_m, cfg.b, float(cfg.kg), float(cfg.k), AD, bD, cD)
    t = np.arange(steps + 1) * sc.h
    return SimTrace(
        t=t, x=Z[:, :n], u=S[:, 0], r=sc.r(t), sigma=sc.sigma(t), rtilde=r_tilde, eta=S[:, 4],
        h=sc.h, tau_eff=sc.tau_eff, peak=float(np.abs(Z[:, :n]).max()),
        extra={"eps_l": S[:, 1], "zeta_l": S[:, 2], "zeta_ld": S[:, 3], "eta_l": S[:, 4]})


def verify_equivalence(adaptive: SimTrace, sc: Scenario) -> EquivalenceReport:
    """Replay the adaptive run's ``r_tilde`` through the delayed LTI loop.

    Returns the sup-norm mismatch between ``x_l`` and the controller's
    measured state ``x_d`` and between ``u_l`` and ``u``.
    """
    if adaptive.rtilde is None or adaptive.x_d is None:
        raise ValueError("adaptive trace carries no r_tilde diagnostics")
    if adaptive.record_every != 1 or not math.isclose(adaptive.h, sc.h) \
            or not math.isclose(adaptive.tau_eff, sc.tau_eff):
        raise ValueError("trace grid does not match the scenario grid (record every step)")
    expected = np.arange(len(adaptive)) * sc.h
    if not np.allclose(adaptive.t, expected, rtol=0, atol=1e-9 * sc.h * max(1, len(adaptive))):
        raise ValueError("trace time grid mismatch")
    lti = simulate_lti_delayed(sc, adaptive.rtilde)
    dx = np.abs(lti.x - adaptive.x_d).max()
    du = np.abs(lti.u - adaptive.u).max()
    return EquivalenceReport(float(dx), float(du), float(np.abs(adaptive.x_d).max()),
                             float(np.abs(adaptive.u).max()), len(adaptive))


def _late_growth(trace: SimTrace):
    x = np.abs(trace.x).max(axis=1)
    q = x.size // 4
    if q < 2:
        return 1.0
    mid = x[q:2 * q].max()
    late = x[3 * q:].max()
    return late / mid if mid > 0 else (0.0 if late == 0 else math.inf)


def stability_probe(sc: Scenario, tau=None, reference_peak=None,
                    envelope_factor=ENVELOPE_FACTOR, growth_limit=1.5) -> StabilityVerdict:
    """Classify the delayed adaptive loop as stable / diverged / inconclusive.

    ``stable``: no blow-up, peak |x| within ``envelope_factor`` times the
    undelayed peak and no growth between the second and last quarter of the
    run. ``diverged``: blow-up, or a guard trip beyond the envelope.
    """
    if tau is not None:
        sc = sc.with_(tau=tau)
    rec = max(1, sc.steps // 4000)
    probe = sc.with_(record_every=rec)
    if reference_peak is None:
        reference_peak = _no_delay_peak(probe)
    limit = envelope_factor * max(reference_peak, 1e-12)
    tr = simulate_closed_loop(probe)
    if tr.status == "diverged":
        return StabilityVerdict("diverged", tr.peak, tr.status_time, sc.tau_eff)
    if tr.status == "guard":
        cls = "diverged" if tr.peak > limit else "inconclusive"
        return StabilityVerdict(cls, tr.peak, tr.status_time, sc.tau_eff)
    if tr.peak > limit:
        return StabilityVerdict("inconclusive", tr.peak, None, sc.tau_eff)
    if _late_growth(tr) > growth_limit:
        return StabilityVerdict("inconclusive", tr.peak, None, sc.tau_eff)
    return StabilityVerdict("stable", tr.peak, None, sc.tau_eff)


def _no_delay_peak(sc: Scenario):
    tr = simulate_closed_loop(sc.with_(tau=0.0))
    if tr.status != "ok":
        raise ValueError(f"undelayed run is not well behaved (status {tr.status})")
    return tr.peak


def empirical_delay_margin(sc: Scenario, tau_hi, iters=16):
    """Bisect on grid delays for ``[tau_stable, tau_unstable]``.

    Requires the undelayed loop to be stable and ``tau_hi`` to diverge.
    """
    ref_peak = _no_delay_peak(sc)
    v0 = stability_probe(sc, 0.0, ref_peak)
    vhi = stability_probe(sc, tau_hi, ref_peak)
    if v0.classification != "stable" or vhi.classification != "diverged":
        raise ValueError(
            f"bracket precondition failed: tau=0 -> {v0.classification}, "
            f"tau={tau_hi} -> {vhi.classification}")
    lo, hi = 0, int(round(tau_hi / sc.h))
    for _ in range(iters):
        if hi - lo <= 1:
            break
        mid = (lo + hi) // 2
        if stability_probe(sc, mid * sc.h, ref_peak).classification == "stable":
            lo = mid
        else:
            hi = mid
    return lo * sc.h, hi * sc.h
