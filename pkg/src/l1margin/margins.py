"""Frequency-domain margins and transient-bound evaluators for the L1 loop.

The loop transfer function cut at the delayed state is

    H_o(s) = C(s) (1 + theta^T Hbar(s)) / (1 - C(s)),

which for any D(s) collapses to ``omega k D(s) (1 + theta^T Hbar(s))`` since
``C / (1 - C) = omega k D``. Both paths are available and cross-checked.

The open loop is generally unstable (``A_m + b theta^T`` need not be
Hurwitz), so phase margins are reported wrapped into ``(-pi, pi]``.
"""
from __future__ import annotations

import io
import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .l1ctrl import ControllerConfig, UncertaintySets, integrator
from .linsys import (FrequencyGrid, RationalTF, StateSpace, hbar_realization, is_hurwitz,
                     l1_gain, spectral_summary, ss_to_tf, tf_to_ss)

__all__ = [
    "NoCrossoverError",
    "VertexResult",
    "MarginReport",
    "BoundReport",
    "EpsilonReport",
    "omega_samples",
    "l1_norm",
    "closed_filter",
    "check_l1_condition",
    "open_loop_Ho",
    "phase_margin",
    "time_delay_margin",
    "worst_case_delay_margin",
    "gain_margin_interval",
    "theta_m_lemma5",
    "find_c_o",
    "transient_bounds",
    "epsilon_c_eval",
    "analyze",
]

OMEGA_INTERIOR = 5
SWEEP_DENSITY = 21


class NoCrossoverError(ValueError):
    """|H_o(i w)| does not cross 1 on the frequency span searched."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def omega_samples(interval, interior=OMEGA_INTERIOR):
    """Endpoints plus ``interior`` evenly spaced points of ``[w_lo, w_hi]``."""
    lo, hi = (float(v) for v in interval)
    if lo > hi:
        raise ValueError("omega interval must satisfy lo <= hi")
    if lo == hi:
        return np.array([lo])
    return np.linspace(lo, hi, interior + 2)


def l1_norm(sys: StateSpace, rel_tol=1e-6):
    """L1 norm of a stable proper system, feedthrough included.

    The direct term contributes ``|D_ij|`` to each entry (a weighted delta in
    the impulse response).
    """
    if sys.strictly_proper:
        return l1_gain(sys, rel_tol)
    if not np.any(sys.C):
        return float(np.abs(sys.D).sum(axis=1).max())
    strict = StateSpace(sys.A, sys.B, sys.C)
    _, table = l1_gain(strict, rel_tol, return_table=True)
    return float((table + np.abs(sys.D)).sum(axis=1).max())


def closed_filter(omega, k, D: RationalTF = None) -> RationalTF:
    """C(s) = omega k D / (1 + omega k D), validated."""
    D = integrator() if D is None else D
    okD = float(omega) * float(k) * D
    C = (okD / (1.0 + okD)).cancel()
    if not C.strictly_proper:
        raise ValueError("C(s) must be strictly proper")
    dc = C.dc_gain()
    if not np.isfinite(dc) or abs(dc - 1.0) > 1e-9:
        raise ValueError(f"C(0) must equal 1, got {dc}")
    return C


def _tf_ss(tf: RationalTF) -> StateSpace:
    return tf_to_ss(tf)


def _G_realization(A_m, b, C: RationalTF) -> StateSpace:
    """H(s) (1 - C(s)) with the full state of H as output."""
    n = np.atleast_2d(A_m).shape[0]
    H = StateSpace(A_m, b, np.eye(n))
    return H.series(_tf_ss(1.0 - C))


def _bounds_box(theta_box):
    box = np.atleast_2d(np.asarray(theta_box, dtype=float))
    if box.shape[1] != 2 or np.any(box[:, 0] > box[:, 1]):
        raise ValueError("theta_box must be (n, 2) with lo <= hi")
    return box


# ---------------------------------------------------------------------------
# L1 condition and the loop transfer function
# ---------------------------------------------------------------------------


def check_l1_condition(A_m, b, theta_box, omega_interval, k, D: RationalTF = None,
                       rel_tol=1e-6):
    """Return ``(max_omega ||G||_L1 * L, holds)`` with ``G = H (1 - C)``.

    C(s) depends on the unknown gain, so the value is maximized over the
    interval endpoints and interior samples.
    """
    A_m = np.atleast_2d(np.asarray(A_m, dtype=float))
    if not is_hurwitz(A_m):
        raise ValueError("A_m must be Hurwitz")
    L = float(np.abs(_bounds_box(theta_box)).max(axis=1).sum())
    value = 0.0
    for w in omega_samples(omega_interval):
        C = closed_filter(w, k, D)
        if L == 0.0:
            continue
        value = max(value, l1_gain(_G_realization(A_m, b, C), rel_tol) * L)
    return value, bool(value < 1.0)


def _theta_hbar(A_m, b, theta) -> RationalTF:
    """theta^T Hbar(s) as an exact rational function."""
    Hb = hbar_realization(A_m, b, theta)
    return ss_to_tf(StateSpace(Hb.A, Hb.B, np.asarray(theta, dtype=float)))


def open_loop_Ho(A_m, b, theta, omega, k, D: RationalTF = None, path="simplified",
                 cross_check=True, rtol=1e-9):
    """Loop transfer function cut at the delayed state.

    ``path`` selects the construction returned: ``"simplified"`` builds
    ``omega k D (1 + theta^T Hbar)``, ``"direct"`` assembles
    ``C / (1 - C) * (1 + theta^T Hbar)`` after cancelling the common factor
    of ``C / (1 - C)``. With ``cross_check`` both are built and compared on a
    four-decade grid.
    """
    D = integrator() if D is None else D
    A_m = np.atleast_2d(np.asarray(A_m, dtype=float))
    theta = np.asarray(theta, dtype=float).ravel()
    one_plus = 1.0 + _theta_hbar(A_m, b, theta) if np.any(theta) else RationalTF.constant(1.0)

    def simplified():
        return float(omega) * float(k) * D * one_plus

    def direct():
        C = closed_filter(omega, k, D)
        # only the filter's own common factor is cancelled; near pole/zero
        # pairs of 1 + theta^T Hbar (small theta) are genuine and kept
        ratio = (C / (1.0 - C)).cancel(1e-7)
        _check_origin(ratio)
        return ratio * one_plus

    if path not in ("simplified", "direct"):
        raise ValueError(f"unknown path {path!r}")
    chosen = simplified() if path == "simplified" else direct()
    if cross_check:
        other = direct() if path == "simplified" else simplified()
        w = np.logspace(-1, 3, 41)
        a = chosen(1j * w)
        c = other(1j * w)
        err = np.max(np.abs(a - c) / np.maximum(np.abs(c), 1e-300))
        if err > rtol:
            raise ArithmeticError(f"H_o construction paths disagree: max rel. error {err:.3e}")
    return chosen


def _check_origin(tf: RationalTF, tol=1e-6):
    z = tf.zeros()
    p = tf.poles()
    if np.any(np.abs(z) < tol) and np.any(np.abs(p) < tol):
        raise ArithmeticError(
            "H_o retains a pole/zero pair at the origin after cancellation; "
            "the construction is numerically ill-conditioned")


# ---------------------------------------------------------------------------
# phase margin and delay margin
# ---------------------------------------------------------------------------


def _wrap(angle):
    """Map to (-pi, pi]."""
    a = math.remainder(angle, 2 * math.pi)
    return math.pi if a == -math.pi else a


def _crossings(Ho: RationalTF, w):
    resp = Ho(1j * w)
    mag = np.abs(resp)
    phase = np.unwrap(np.angle(resp))
    f = mag - 1.0
    out = []
    logw = np.log(w)
    g = lambda lw: abs(Ho(1j * math.exp(lw))) - 1.0  # noqa: E731
    for j in range(len(w) - 1):
        if f[j] == 0.0:
            out.append((w[j], phase[j]))
        elif f[j] * f[j + 1] < 0:
            lw = brentq(g, logw[j], logw[j + 1], xtol=1e-12, rtol=1e-12)
            wc = math.exp(lw)
            ref = phase[j]
            ph = ref + math.remainder(np.angle(Ho(1j * wc)) - ref, 2 * math.pi)
            out.append((wc, ph))
    if f[-1] == 0.0:
        out.append((w[-1], phase[-1]))
    return out


def phase_margin(Ho: RationalTF, grid: FrequencyGrid = None, extend=3):
    """``(pm, omega_c)`` of the negative-feedback loop ``Ho``.

    Gain crossings are bracketed on the log grid and refined on ``log w``.
    With several crossings the smallest margin is returned. When ``grid``
    is the default, the span is extended by a decade on each side up to
    ``extend`` times before giving up.
    """
    user_grid = grid is not None
    grid = FrequencyGrid.logspace() if grid is None else grid
    w = grid.omegas
    for attempt in range(extend + 1):
        hits = _crossings(Ho, w)
        if hits or user_grid:
            break
        w = np.logspace(np.log10(w[0]) - 1, np.log10(w[-1]) + 1, len(w) + 570)
    if not hits:
        raise NoCrossoverError(
            f"|H_o| does not cross 1 on [{w[0]:.3g}, {w[-1]:.3g}] rad/s; extend the grid")
    best = None
    for wc, ph in hits:
        pm = _wrap(math.pi + ph)
        if best is None or pm < best[0]:
            best = (pm, wc)
    return best


def time_delay_margin(Ho: RationalTF, grid: FrequencyGrid = None):
    """pm / omega_c in seconds."""
    pm, wc = phase_margin(Ho, grid)
    return pm / wc


# ---------------------------------------------------------------------------
# worst-case sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VertexResult:
    theta: tuple
    omega: float
    phase_margin: float = float("nan")
    crossover: float = float("nan")
    delay_margin: float = float("nan")
    error: str = None

    @property
    def key(self):
        return (*self.theta, self.omega)


def _vertex(A_m, b, theta, omega, k, D, grid):
    try:
        Ho = open_loop_Ho(A_m, b, theta, omega, k, D, cross_check=False)
        pm, wc = phase_margin(Ho, grid)
        return VertexResult(tuple(float(t) for t in theta), float(omega), pm, wc, pm / wc)
    except (NoCrossoverError, ArithmeticError, ValueError) as exc:
        return VertexResult(tuple(float(t) for t in theta), float(omega), error=str(exc))


def _theta_grid(box, density):
    axes = [np.unique(np.concatenate([np.linspace(lo, hi, density), [lo, hi]]))
            for lo, hi in box]
    return [np.array(p) for p in itertools.product(*axes)]


def worst_case_delay_margin(A_m, b, theta_box, omega_interval, k, D: RationalTF = None,
                            grid_density=SWEEP_DENSITY, omega_interior=OMEGA_INTERIOR,
                            grid: FrequencyGrid = None, workers=4):
    """Minimum delay margin over a grid on the uncertainty sets.

    Returns ``(min_delay, table)`` where ``table`` lists every grid point
    sorted by ``(theta, omega)``. Points without a crossover are kept in the
    table with their error and excluded from the minimum.
    """
    box = _bounds_box(theta_box)
    D = integrator() if D is None else D
    thetas = _theta_grid(box, max(int(grid_density), 2))
    omegas = omega_samples(omega_interval, omega_interior)
    jobs = [(th, w) for th in thetas for w in omegas]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        table = list(pool.map(lambda job: _vertex(A_m, b, job[0], job[1], k, D, grid), jobs))
    table.sort(key=lambda v: v.key)
    good = [v for v in table if v.error is None]
    bad = len(table) - len(good)
    if bad:
        warnings.warn(f"{bad} sweep point(s) had no usable crossover and were excluded",
                      RuntimeWarning, stacklevel=2)
    if not good:
        raise NoCrossoverError("no sweep point produced a delay margin")
    worst = min(good, key=lambda v: v.delay_margin)
    return worst.delay_margin, table


# ---------------------------------------------------------------------------
# gain margin
# ---------------------------------------------------------------------------


def gain_margin_interval(omega0, omega):
    """``[w_l / w_l0, w_u / w_u0]``; requires ``0 < w_l < w_l0 < w_u0 < w_u``."""
    wl0, wu0 = (float(v) for v in omega0)
    wl, wu = (float(v) for v in omega)
    if not 0 < wl < wl0 < wu0 < wu:
        raise ValueError(
            f"need 0 < omega_l < omega_l0 < omega_u0 < omega_u, got {omega} / {omega0}")
    return wl / wl0, wu / wu0


# ---------------------------------------------------------------------------
# transient bounds
# ---------------------------------------------------------------------------


def theta_m_lemma5(theta_box, delta, omega_interval, d_sigma, P, Q):
    """``4 sum max theta_i^2 + 4 Delta^2 + 4 (w_u - w_l)^2
    + 2 lmax(P)/lmin(Q) d_sigma Delta``."""
    box = _bounds_box(theta_box)
    wl, wu = (float(v) for v in omega_interval)
    spec = spectral_summary(P, Q)
    return float(4.0 * (box ** 2).max(axis=1).sum() + 4.0 * delta ** 2 + 4.0 * (wu - wl) ** 2
                 + 2.0 * spec.lambda_max_P / spec.lambda_min_Q * d_sigma * delta)


def _output_tf(A_m, b, c_o) -> RationalTF:
    return ss_to_tf(StateSpace(A_m, b, c_o))


def _relative_degree_one_min_phase(tf: RationalTF, tol=1e-9):
    num = tf.num
    scale = np.abs(num).max() if num.size else 0.0
    if scale == 0.0:
        return False
    num = num.copy()
    num[np.abs(num) <= tol * scale] = 0.0
    num = np.trim_zeros(num, "b")
    if len(num) != len(tf.den) - 1:
        return False
    zeros = RationalTF(num, [1.0]).zeros() if len(num) > 1 else np.empty(0)
    return bool(np.all(zeros.real < -1e-9))


def find_c_o(A_m, b, c, P=None):
    """First of ``c``, ``e_1 .. e_n``, ``P b`` giving a minimum-phase,
    relative-degree-one ``c_o^T H``; ``None`` if none qualifies.

    ``P b`` always qualifies when ``P`` solves the Lyapunov equation, since
    ``b^T P (sI - A_m)^{-1} b`` is strictly positive real.
    """
    A_m = np.atleast_2d(np.asarray(A_m, dtype=float))
    n = A_m.shape[0]
    b = np.asarray(b, dtype=float).ravel()
    candidates = [np.asarray(c, dtype=float).ravel()] + list(np.eye(n))
    if P is not None:
        candidates.append(np.asarray(P) @ b)
    for c_o in candidates:
        if _relative_degree_one_min_phase(_output_tf(A_m, b, c_o)):
            return c_o
    return None


@dataclass(frozen=True)
class BoundReport:
    theta_m: float
    xtilde_bound: float
    gamma1: float
    gamma2: float = None
    c_o: np.ndarray = None
    diagnostics: tuple = ()

    def __post_init__(self):
        vals = [self.theta_m, self.xtilde_bound, self.gamma1]
        if self.gamma2 is not None:
            vals.append(self.gamma2)
        if any(not v >= 0 for v in vals):
            raise ValueError(f"bounds must be nonnegative, got {vals}")
        if (self.gamma2 is None) != (self.c_o is None):
            raise ValueError("gamma2 is reported exactly when c_o is available")


def _inverse_output_filter(C: RationalTF, A_m, b, c_o) -> StateSpace:
    """Realization of C(s) / (c_o^T H(s)) (proper, possibly biproper)."""
    T = (C / _output_tf(A_m, b, c_o)).cancel(1e-8)
    return tf_to_ss(T)


def transient_bounds(cfg: ControllerConfig, gamma_c=None, c_o=None, theta=None, omega=None,
                     rel_tol=1e-6):
    """Predictor-error bound on ``x_hat - x`` and the gamma1/gamma2 bounds on
    ``x - x_ref`` and ``u - u_ref``.

    ``theta`` and ``omega`` default to the worst case over the declared sets:
    ``||C/omega theta^T||`` becomes ``L ||C/omega||`` maximized over the gain
    samples, and every filter norm is maximized the same way.
    """
    sets = cfg.sets
    gamma_c = cfg.gamma_c if gamma_c is None else float(gamma_c)
    P, Q = cfg.P, cfg.Q
    spec = spectral_summary(P, Q)
    th_m = theta_m_lemma5(sets.theta_box, sets.delta, sets.omega, sets.d_sigma, P, Q)
    xt = math.sqrt(th_m / (spec.lambda_min_P * gamma_c))
    root = math.sqrt(th_m / (spec.lambda_max_P * gamma_c))
    ws = omega_samples(sets.omega0) if omega is None else np.array([float(omega)])
    L = sets.L
    theta_l1 = L if theta is None else float(np.abs(np.asarray(theta, dtype=float)).sum())

    C_norm = 0.0
    G_norm = 0.0
    Cw_norm = 0.0
    filters = []
    for w in ws:
        C = closed_filter(w, cfg.k, cfg.D)
        Css = tf_to_ss(C)
        C_norm = max(C_norm, l1_gain(Css, rel_tol))
        G_norm = max(G_norm, l1_gain(_G_realization(cfg.A_m, cfg.b, C), rel_tol))
        Cw_norm = max(Cw_norm, l1_gain(Css, rel_tol) / w)
        filters.append((w, C))
    if G_norm * L >= 1.0:
        raise ValueError(f"L1 condition fails: ||G|| L = {G_norm * L:.4g} >= 1")
    g1 = C_norm / (1.0 - G_norm * L) * root

    diags = []
    if c_o is None:
        c_o = find_c_o(cfg.A_m, cfg.b, cfg.c, P)
        if c_o is None:
            diags.append("no c_o found with minimum-phase relative-degree-one c_o^T H; "
                         "gamma2 omitted")
    else:
        c_o = np.asarray(c_o, dtype=float).ravel()
        if not _relative_degree_one_min_phase(_output_tf(cfg.A_m, cfg.b, c_o)):
            raise ValueError("supplied c_o does not give a minimum-phase relative-degree-one "
                             "c_o^T H")
    g2 = None
    if c_o is not None:
        inv = max(l1_norm(_inverse_output_filter(C / w, cfg.A_m, cfg.b, c_o), rel_tol)
                  for w, C in filters)
        g2 = float(theta_l1 * Cw_norm * g1 + inv * float(np.abs(c_o).sum()) * root)
    return BoundReport(th_m, xt, g1, g2, c_o, tuple(diags))


@dataclass(frozen=True)
class EpsilonReport:
    theta_m_tau: float
    epsilon_c: float
    delta: float
    gamma_c_min: float


def epsilon_c_eval(epsilon_b, tau, delta_n, delta_d, theta_box, omega_interval, P, Q, c_o,
                   A_m, b, C: RationalTF, delta=None, delta1=0.0, delta2=0.0):
    """Delay-dependent ``theta_m(eps_b, tau)`` and ``eps_c(eps_b, tau)``.

    ``delta_n`` and ``delta_d`` are caller-supplied estimates of the sup-maps
    bounding ``|sigma + eta_l|`` and ``|sigma' + eta_l'|``. ``delta``
    defaults to ``delta_n + delta1``. Also returns the implied minimum
    adaptation gain ``sqrt(eps_c) + delta2``. ``tau`` is carried for the
    record; it enters only through the caller's sup-map estimates.
    """
    if epsilon_b <= 0:
        raise ValueError("epsilon_b must be positive")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    delta = float(delta_n) + float(delta1) if delta is None else float(delta)
    box = _bounds_box(theta_box)
    wl, wu = (float(v) for v in omega_interval)
    spec = spectral_summary(P, Q)
    th = float(4.0 * (box ** 2).max(axis=1).sum() + 4.0 * delta ** 2 + 4.0 * (wu - wl) ** 2
               + 2.0 * spec.lambda_max_P * float(delta_d) * delta / spec.lambda_min_Q)
    c_o = np.asarray(c_o, dtype=float).ravel()
    inv = l1_norm(_inverse_output_filter(C, A_m, b, c_o)) * float(np.abs(c_o).sum())
    eps = inv * math.sqrt(th / (spec.lambda_max_P * epsilon_b ** 2))
    return EpsilonReport(th, eps, delta, math.sqrt(eps) + float(delta2))


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarginReport:
    l1_condition_value: float
    l1_condition_holds: bool
    phase_margin: float
    crossover: float
    delay_margin: float
    gain_margin_interval: tuple
    vertices: tuple = ()
    worst: VertexResult = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.isfinite(self.phase_margin) and np.isfinite(self.crossover):
            expect = self.phase_margin / self.crossover
            if not math.isclose(self.delay_margin, expect, rel_tol=1e-12, abs_tol=0.0):
                raise ValueError("delay_margin must equal phase_margin / crossover")

    def to_text(self):
        g_lo, g_hi = self.gain_margin_interval
        lines = [f"{k} = {v}" for k, v in self.meta.items()]
        lines += [
            f"l1_condition_value = {self.l1_condition_value:.12g}",
            f"l1_condition_holds = {str(self.l1_condition_holds).lower()}",
            f"phase_margin_rad = {self.phase_margin:.12g}",
            f"phase_margin_deg = {math.degrees(self.phase_margin):.12g}",
            f"crossover_rad_s = {self.crossover:.12g}",
            f"delay_margin_s = {self.delay_margin:.12g}",
            f"gain_margin_interval = [{g_lo:.12g}, {g_hi:.12g}]",
        ]
        if self.vertices:
            bad = [v for v in self.vertices if v.error is not None]
            lines += [
                f"sweep_points = {len(self.vertices)}",
                f"sweep_failed_points = {len(bad)}",
                f"worst_delay_margin_s = {self.worst.delay_margin:.12g}",
                f"worst_theta = [{', '.join(f'{t:.12g}' for t in self.worst.theta)}]",
                f"worst_omega = {self.worst.omega:.12g}",
            ]
            for v in bad:
                lines.append(f"sweep_error theta={list(v.theta)} omega={v.omega:.12g}: {v.error}")
        return "\n".join(lines) + "\n"

    def vertex_csv(self):
        if not self.vertices:
            raise ValueError("report has no sweep table")
        n = len(self.vertices[0].theta)
        buf = io.StringIO()
        cols = [f"theta_{i + 1}" for i in range(n)] + ["omega", "pm_rad", "omega_c",
                                                       "delay_margin_s"]
        buf.write(",".join(cols) + "\n")
        for v in self.vertices:
            vals = [*v.theta, v.omega, v.phase_margin, v.crossover, v.delay_margin]
            buf.write(",".join(f"{x:.12g}" for x in vals) + "\n")
        return buf.getvalue()


def analyze(cfg: ControllerConfig, theta, omega, sweep=False, grid: FrequencyGrid = None,
            grid_density=SWEEP_DENSITY, workers=4):
    """Single-point margins at ``(theta, omega)``; with ``sweep`` also the
    worst case over ``Theta x Omega_0``."""
    sets: UncertaintySets = cfg.sets
    value, holds = check_l1_condition(cfg.A_m, cfg.b, sets.theta_box, sets.omega0, cfg.k, cfg.D)
    Ho = open_loop_Ho(cfg.A_m, cfg.b, theta, omega, cfg.k, cfg.D)
    pm, wc = phase_margin(Ho, grid)
    gm = gain_margin_interval(sets.omega0, sets.omega)
    vertices, worst = (), None
    if sweep:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            _, table = worst_case_delay_margin(cfg.A_m, cfg.b, sets.theta_box, sets.omega0,
                                               cfg.k, cfg.D, grid_density, grid=grid,
                                               workers=workers)
        vertices = tuple(table)
        worst = min((v for v in table if v.error is None), key=lambda v: v.delay_margin)
    return MarginReport(value, holds, pm, wc, pm / wc, gm, vertices, worst)
