"""L1 adaptive controller: companion model, projection-based adaptive laws and
low-pass control law ``chi = D(s) r_u``, ``u = -k chi``.

The controller is a value type: :func:`controller_step` maps a state to the
next state and never mutates its input.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .linsys import RationalTF, is_hurwitz, lyapunov_solve, tf_to_ss

__all__ = [
    "StepGuardError",
    "UncertaintySets",
    "ControllerConfig",
    "ControllerState",
    "AdaptiveEstimates",
    "k_g",
    "proj",
    "adaptive_rates",
    "controller_step",
    "integrator",
]


class StepGuardError(RuntimeError):
    """An estimate moved more than 0.2 box widths in a single step."""


def integrator():
    """D(s) = 1/s."""
    return RationalTF([1.0], [0.0, 1.0])


@dataclass(frozen=True)
class UncertaintySets:
    """Declared uncertainty bounds.

    ``theta_box`` is an ``(n, 2)`` array of per-component ``[lo, hi]``;
    ``delta0``/``omega0`` bound the true disturbance and input gain while the
    wider ``delta``/``omega`` are used by the projection operator.
    """

    theta_box: np.ndarray
    delta0: float
    delta: float
    omega0: tuple
    omega: tuple
    d_sigma: float = 0.0

    def __post_init__(self):
        box = np.atleast_2d(np.asarray(self.theta_box, dtype=float))
        if box.shape[1] != 2 or np.any(box[:, 0] > box[:, 1]):
            raise ValueError("theta_box must be (n, 2) with lo <= hi")
        object.__setattr__(self, "theta_box", box)
        object.__setattr__(self, "omega0", tuple(float(v) for v in self.omega0))
        object.__setattr__(self, "omega", tuple(float(v) for v in self.omega))
        wl0, wu0 = self.omega0
        wl, wu = self.omega
        if not 0 <= self.delta0 < self.delta:
            raise ValueError(f"need 0 <= delta0 < delta, got {self.delta0}, {self.delta}")
        if not 0 < wl < wl0 < wu0 < wu:
            raise ValueError(
                f"need 0 < omega_l < omega_l0 < omega_u0 < omega_u, got {self.omega} / {self.omega0}")
        if self.d_sigma < 0:
            raise ValueError("d_sigma must be nonnegative")

    @property
    def n(self):
        return self.theta_box.shape[0]

    @property
    def L(self):
        """max over the box of sum |theta_i|."""
        return float(np.abs(self.theta_box).max(axis=1).sum())

    def estimate_bounds(self):
        """(lo, hi) arrays for [theta_hat..., sigma_hat, omega_hat]."""
        lo = np.concatenate([self.theta_box[:, 0], [-self.delta, self.omega[0]]])
        hi = np.concatenate([self.theta_box[:, 1], [self.delta, self.omega[1]]])
        return lo, hi


@dataclass(frozen=True)
class ControllerConfig:
    A_m: np.ndarray
    b: np.ndarray
    c: np.ndarray
    k: float
    gamma_c: float
    sets: UncertaintySets
    Q: np.ndarray = None
    D: RationalTF = field(default_factory=integrator)

    def __post_init__(self):
        A_m = np.atleast_2d(np.asarray(self.A_m, dtype=float))
        n = A_m.shape[0]
        b = np.asarray(self.b, dtype=float).ravel()
        c = np.asarray(self.c, dtype=float).ravel()
        if A_m.shape != (n, n) or b.size != n or c.size != n:
            raise ValueError("A_m, b, c dimensions are inconsistent")
        if self.sets.n != n:
            raise ValueError(f"theta_box has {self.sets.n} rows, plant order is {n}")
        if not is_hurwitz(A_m):
            raise ValueError("A_m must be Hurwitz")
        if self.k <= 0 or self.gamma_c <= 0:
            raise ValueError("k and gamma_c must be positive")
        Q = np.eye(n) if self.Q is None else np.atleast_2d(np.asarray(self.Q, dtype=float))
        if not self.D.strictly_proper:
            raise ValueError("D(s) must be strictly proper so u = -k chi has no algebraic loop")
        for name, val in (("A_m", A_m), ("b", b), ("c", c), ("Q", Q)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_P", lyapunov_solve(A_m, Q))
        object.__setattr__(self, "_kg", k_g(A_m, b, c))
        Dss = tf_to_ss(self.D)
        object.__setattr__(self, "_Dss", Dss)

    @property
    def n(self):
        return self.A_m.shape[0]

    @property
    def P(self):
        return self._P

    @property
    def kg(self):
        return self._kg

    @property
    def d_realization(self):
        """(A_D, b_D, c_D) of the strictly proper D(s)."""
        Dss = self._Dss
        return Dss.A, Dss.B[:, 0].copy(), Dss.C[0].copy()

    def kernel_args(self):
        lo, hi = self.sets.estimate_bounds()
        AD, bD, cD = self.d_realization
        return (self.A_m, self.b, self.P @ self.b, float(self.kg), float(self.k),
                float(self.gamma_c), AD, bD, cD, lo, hi)

    def C_tf(self, omega):
        """C(s) = omega k D / (1 + omega k D)."""
        okD = omega * self.k * self.D
        return (okD / (1.0 + okD)).cancel()

    def with_gain(self, gamma_c):
        return replace(self, gamma_c=gamma_c)


@dataclass(frozen=True)
class ControllerState:
    xhat: np.ndarray
    theta_hat: np.ndarray
    sigma_hat: float
    omega_hat: float
    chi: np.ndarray

    @classmethod
    def initial(cls, cfg: ControllerConfig, x0=None, theta_hat0=None, sigma_hat0=0.0,
                omega_hat0=None):
        """Companion state at ``x0``; estimates default to zero / unit gain,
        clipped into their projection boxes."""
        n = cfg.n
        lo, hi = cfg.sets.estimate_bounds()
        x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
        th = np.zeros(n) if theta_hat0 is None else np.asarray(theta_hat0, dtype=float)
        om = 1.0 if omega_hat0 is None else float(omega_hat0)
        est = np.clip(np.concatenate([th, [sigma_hat0, om]]), lo, hi)
        return cls(x0.copy(), est[:n], float(est[n]), float(est[n + 1]),
                   np.zeros(cfg.D.degree))

    def to_vector(self):
        return np.concatenate([self.xhat, self.theta_hat, [self.sigma_hat, self.omega_hat],
                               np.atleast_1d(self.chi)])

    @classmethod
    def from_vector(cls, z, n):
        return cls(z[:n].copy(), z[n:2 * n].copy(), float(z[2 * n]), float(z[2 * n + 1]),
                   z[2 * n + 2:].copy())

    def check(self, cfg: ControllerConfig, tol=1e-12):
        lo, hi = cfg.sets.estimate_bounds()
        est = np.concatenate([self.theta_hat, [self.sigma_hat, self.omega_hat]])
        span = np.maximum(hi - lo, 1.0)
        if np.any(est < lo - tol * span) or np.any(est > hi + tol * span):
            raise ValueError(f"estimates {est} outside projection box [{lo}, {hi}]")


@dataclass(frozen=True)
class AdaptiveEstimates:
    """Estimates with their errors against a known truth.

    ``sigma_true`` is the lumped disturbance the estimate tracks, i.e.
    ``sigma + eta`` when a delay-induced term is present.
    """

    theta_hat: np.ndarray
    sigma_hat: float
    omega_hat: float
    theta: np.ndarray = None
    sigma_true: float = None
    omega: float = None

    @property
    def has_truth(self):
        return self.theta is not None and self.sigma_true is not None and self.omega is not None

    def _need_truth(self):
        if not self.has_truth:
            raise ValueError("error fields need a ground-truth scenario")

    @property
    def theta_tilde(self):
        self._need_truth()
        return np.asarray(self.theta_hat) - np.asarray(self.theta)

    @property
    def sigma_tilde(self):
        self._need_truth()
        return self.sigma_hat - self.sigma_true

    @property
    def omega_tilde(self):
        self._need_truth()
        return self.omega_hat - self.omega

    def r_tilde(self, x, u):
        return self.omega_tilde * u + self.theta_tilde @ np.asarray(x) + self.sigma_tilde


def k_g(A_m, b, c):
    """DC feedforward gain ``-1 / (c^T A_m^{-1} b)``."""
    A_m = np.atleast_2d(np.asarray(A_m, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    c = np.asarray(c, dtype=float).ravel()
    try:
        z = np.linalg.solve(A_m, b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("A_m is singular") from exc
    den = float(c @ z)
    if abs(den) <= 1e-12 * np.linalg.norm(c) * np.linalg.norm(z):
        raise ValueError("c^T A_m^{-1} b is zero; the output has no DC path")
    return -1.0 / den


def proj(estimate, raw_rate, lo, hi):
    """Gate a rate at the faces of the box ``[lo, hi]``.

    Components sitting on the upper face with a positive rate, or on the
    lower face with a negative rate, are zeroed.
    """
    est = np.asarray(estimate, dtype=float)
    rate = np.array(raw_rate, dtype=float, copy=True)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), est.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), est.shape)
    span = np.maximum(hi - lo, 1.0)
    if np.any(est > hi + 1e-12 * span) or np.any(est < lo - 1e-12 * span):
        raise ValueError(f"estimate {est} outside its box")
    outward = ((est >= hi) & (rate > 0)) | ((est <= lo) & (rate < 0))
    rate[outward] = 0.0
    return rate if rate.ndim else float(rate)


def adaptive_rates(state: ControllerState, x_meas, u, P, b, gamma_c, sets: UncertaintySets):
    """Projected rates ``(theta_hat', sigma_hat', omega_hat')``."""
    x_meas = np.asarray(x_meas, dtype=float)
    e = float((state.xhat - x_meas) @ (np.asarray(P) @ np.asarray(b, dtype=float).ravel()))
    box = sets.theta_box
    dth = proj(state.theta_hat, -gamma_c * x_meas * e, box[:, 0], box[:, 1])
    dsg = proj(state.sigma_hat, -gamma_c * e, -sets.delta, sets.delta)
    dom = proj(state.omega_hat, -gamma_c * u * e, sets.omega[0], sets.omega[1])
    return dth, dsg, dom


def controller_step(state: ControllerState, x_meas, r, h, cfg: ControllerConfig):
    """Advance the controller by one RK4 step with ``x_meas`` and ``r`` held.

    Returns ``(u, next_state)`` where ``u`` is the control at the start of
    the step.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    state.check(cfg)
    x_meas = np.asarray(x_meas, dtype=float)
    u, z, tripped = _kernels.controller_rk4(state.to_vector(), x_meas, float(r), float(h),
                                            *cfg.kernel_args())
    if tripped:
        raise StepGuardError(
            f"estimate update exceeded 0.2 box widths in one step of h={h}; "
            "reduce h or gamma_c")
    return float(u), ControllerState.from_vector(z, cfg.n)
