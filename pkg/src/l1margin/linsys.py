"""Dense linear-systems numerics for small continuous-time LTI models.

Two carriers are used throughout the package:

* :class:`StateSpace` holds a realization ``(A, B, C, D)``. Single-input
  single-output data can be passed as vectors and is promoted to 2-D.
* :class:`RationalTF` holds a SISO ratio of polynomials with coefficients in
  *ascending* degree order, i.e. ``num[k]`` multiplies ``s**k``.

All routines are pure functions of their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from numbers import Number

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import linalg as sla

__all__ = [
    "NotHurwitzError",
    "StateSpace",
    "RationalTF",
    "FrequencyGrid",
    "SpectralSummary",
    "is_hurwitz",
    "lyapunov_solve",
    "freq_response",
    "impulse_response",
    "l1_gain",
    "spectral_summary",
    "hbar_realization",
    "charpoly",
    "ss_to_tf",
    "tf_to_ss",
]

HURWITZ_TOL = 1e-12


class NotHurwitzError(ValueError):
    """Raised when a matrix that must be Hurwitz has a closed-RHP eigenvalue."""


def _spectral_diagnostic(A):
    eig = np.linalg.eigvals(A)
    worst = eig[np.argmax(eig.real)]
    return f"eigenvalues {np.round(eig, 6).tolist()}; max real part {worst.real:.3e}"


# ---------------------------------------------------------------------------
# carriers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateSpace:
    """LTI realization ``x' = A x + B u, y = C x + D u``.

    ``b`` may be an n-vector (single input) and ``c`` an n-vector (single
    output); both are stored as 2-D arrays.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = field(default=None)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n) or n < 1:
            raise ValueError(f"A must be square with n >= 1, got shape {A.shape}")
        B = np.asarray(self.B, dtype=float)
        B = B.reshape(n, 1) if B.ndim <= 1 else B
        C = np.asarray(self.C, dtype=float)
        C = C.reshape(1, n) if C.ndim <= 1 else C
        if B.shape[0] != n or C.shape[1] != n:
            raise ValueError(
                f"inconsistent dimensions: A {A.shape}, B {B.shape}, C {C.shape}")
        if self.D is None:
            D = np.zeros((C.shape[0], B.shape[1]))
        else:
            D = np.asarray(self.D, dtype=float)
            D = D * np.ones((C.shape[0], B.shape[1])) if D.ndim == 0 else np.atleast_2d(D)
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError(f"D has shape {D.shape}, expected {(C.shape[0], B.shape[1])}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def shape(self):
        """(outputs, inputs)"""
        return self.C.shape[0], self.B.shape[1]

    @property
    def is_siso(self):
        return self.shape == (1, 1)

    @property
    def strictly_proper(self):
        return not np.any(self.D)

    def series(self, other: "StateSpace") -> "StateSpace":
        """Realization of ``self(s) @ other(s)`` (other drives self)."""
        n1, n2 = self.n, other.n
        A = np.block([[other.A, np.zeros((n2, n1))],
                      [self.B @ other.C, self.A]])
        B = np.vstack([other.B, self.B @ other.D])
        C = np.hstack([self.D @ other.C, self.C])
        return StateSpace(A, B, C, self.D @ other.D)

    def output(self, i: int) -> "StateSpace":
        return StateSpace(self.A, self.B, self.C[i:i + 1], self.D[i:i + 1])


def _as_poly(coeffs):
    p = np.atleast_1d(np.asarray(coeffs, dtype=float))
    p = np.trim_zeros(p, "b")
    return p if p.size else np.zeros(1)


@dataclass(frozen=True)
class RationalTF:
    """SISO transfer function ``num(s)/den(s)`` with ascending coefficients."""

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        num, den = _as_poly(self.num), _as_poly(self.den)
        if not np.any(den):
            raise ValueError("denominator is identically zero")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @classmethod
    def constant(cls, value):
        return cls([value], [1.0])

    @property
    def degree(self):
        return len(self.den) - 1

    @property
    def proper(self):
        return len(self.num) <= len(self.den)

    @property
    def strictly_proper(self):
        return not np.any(self.num) or len(self.num) < len(self.den)

    def __call__(self, s):
        s = np.asarray(s)
        return npoly.polyval(s, self.num) / npoly.polyval(s, self.den)

    def poles(self):
        return npoly.polyroots(self.den) if self.degree else np.empty(0, complex)

    def zeros(self):
        return npoly.polyroots(self.num) if len(self.num) > 1 else np.empty(0, complex)

    def dc_gain(self):
        return self(0.0)

    # arithmetic ------------------------------------------------------------
    @staticmethod
    def _coerce(other):
        if isinstance(other, RationalTF):
            return other
        if isinstance(other, Number):
            return RationalTF.constant(float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if np.array_equal(self.den, other.den):
            return RationalTF(npoly.polyadd(self.num, other.num), self.den)
        num = npoly.polyadd(npoly.polymul(self.num, other.den),
                            npoly.polymul(other.num, self.den))
        return RationalTF(num, npoly.polymul(self.den, other.den))

    __radd__ = __add__

    def __neg__(self):
        return RationalTF(-self.num, self.den)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return RationalTF(npoly.polymul(self.num, other.num),
                          npoly.polymul(self.den, other.den))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if not np.any(other.num):
            raise ZeroDivisionError("division by the zero transfer function")
        return RationalTF(npoly.polymul(self.num, other.den),
                          npoly.polymul(self.den, other.num))

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def normalized(self):
        """Monic denominator."""
        lead = self.den[-1]
        return RationalTF(self.num / lead, self.den / lead)

    def cancel(self, tol=1e-8):
        """Remove pole/zero pairs closer than ``tol`` (relative to magnitude)."""
        z = list(self.zeros())
        p = list(self.poles())
        kept_z = []
        for zi in z:
            for j, pj in enumerate(p):
                if abs(zi - pj) <= tol * max(1.0, abs(pj)):
                    p.pop(j)
                    break
            else:
                kept_z.append(zi)
        gain = (self.num[-1] / self.den[-1])
        num = np.real_if_close(npoly.polyfromroots(kept_z) if kept_z else np.ones(1)) * gain
        den = np.real_if_close(npoly.polyfromroots(p) if p else np.ones(1))
        return RationalTF(np.real(num), np.real(den))


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly increasing positive frequencies in rad/s."""

    omegas: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float).ravel()
        if w.size == 0 or np.any(w <= 0) or np.any(np.diff(w) <= 0):
            raise ValueError("frequency grid must be non-empty, positive and strictly increasing")
        object.__setattr__(self, "omegas", w)

    @classmethod
    def logspace(cls, w_min=1e-3, w_max=1e4, points=2000):
        return cls(np.logspace(np.log10(w_min), np.log10(w_max), points))

    def __len__(self):
        return self.omegas.size


@dataclass(frozen=True)
class SpectralSummary:
    lambda_min_P: float
    lambda_max_P: float
    lambda_min_Q: float


# ---------------------------------------------------------------------------
# matrix routines
# ---------------------------------------------------------------------------


def is_hurwitz(A) -> bool:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"square matrix required, got {A.shape}")
    return bool(np.all(np.linalg.eigvals(A).real < -HURWITZ_TOL))


def lyapunov_solve(A, Q):
    """Solve ``A^T P + P A = -Q`` for symmetric positive definite ``P``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if A.shape != Q.shape or A.shape[0] != A.shape[1]:
        raise ValueError(f"A {A.shape} and Q {Q.shape} must be square and equal-sized")
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValueError("Q must be symmetric")
    if not is_hurwitz(A):
        raise NotHurwitzError(f"A is not Hurwitz: {_spectral_diagnostic(A)}")
    P = sla.solve_continuous_lyapunov(A.T, -Q)
    return 0.5 * (P + P.T)


def spectral_summary(P, Q) -> SpectralSummary:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    ev_p = np.linalg.eigvalsh(0.5 * (P + P.T))
    ev_q = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    if ev_p[0] <= 0 or ev_q[0] <= 0:
        raise ValueError(f"P and Q must be positive definite (min eigenvalues {ev_p[0]:.3e}, {ev_q[0]:.3e})")
    return SpectralSummary(float(ev_p[0]), float(ev_p[-1]), float(ev_q[0]))


def charpoly(A):
    """Faddeev-LeVerrier: returns (ascending det(sI-A) coefficients, [M_1..M_n]).

    ``adj(sI - A) = sum_k M_k s^(n-k)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    coeffs = np.zeros(n + 1)
    coeffs[n] = 1.0
    M = np.zeros_like(A)
    Ms = []
    I = np.eye(n)
    for k in range(1, n + 1):
        M = A @ M + coeffs[n - k + 1] * I
        Ms.append(M)
        coeffs[n - k] = -np.trace(A @ M) / k
    return coeffs, Ms


def ss_to_tf(sys: StateSpace, output=0, input=0) -> RationalTF:
    """Exact transfer function of one channel of ``sys``."""
    den, Ms = charpoly(sys.A)
    n = sys.n
    c = sys.C[output]
    b = sys.B[:, input]
    num = np.zeros(n + 1)
    for k, M in enumerate(Ms, start=1):
        num[n - k] += c @ M @ b
    num = num + sys.D[output, input] * den
    return RationalTF(num, den)


def tf_to_ss(tf: RationalTF) -> StateSpace:
    """Controllable canonical realization of a proper ``tf``."""
    if not tf.proper:
        raise ValueError("improper transfer function has no state-space realization")
    tf = tf.normalized()
    n = tf.degree
    num = np.zeros(n + 1)
    num[:len(tf.num)] = tf.num
    d = num[n]
    if n == 0:
        return StateSpace(np.zeros((1, 1)), [0.0], [0.0], d)
    num_sp = num[:n] - d * tf.den[:n]
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -tf.den[:n]
    b = np.zeros(n)
    b[-1] = 1.0
    return StateSpace(A, b, num_sp, d)


# ---------------------------------------------------------------------------
# responses and norms
# ---------------------------------------------------------------------------


def freq_response(sys, omega):
    """Evaluate ``sys(i*omega)``; scalar for SISO data, matrix otherwise."""
    omega = float(omega)
    if omega <= 0:
        raise ValueError("omega must be positive")
    s = 1j * omega
    if isinstance(sys, RationalTF):
        den = npoly.polyval(s, sys.den)
        scale = np.abs(sys.den).sum() * max(1.0, omega) ** sys.degree
        if abs(den) <= 1e-14 * scale:
            raise ZeroDivisionError(f"pole on the imaginary axis at omega={omega}")
        return npoly.polyval(s, sys.num) / den
    M = s * np.eye(sys.n) - sys.A
    if np.linalg.cond(M) > 1e14:
        raise ZeroDivisionError(f"pole on the imaginary axis at omega={omega}")
    G = sys.C @ np.linalg.solve(M, sys.B) + sys.D
    return G[0, 0] if sys.is_siso else G


def impulse_response(sys: StateSpace, h, T):
    """Samples of ``C exp(A t) B`` on ``t = 0, h, ..., T``.

    Returns ``(t, y)``; ``y`` has shape ``(len(t),)`` for SISO systems and
    ``(len(t), p, m)`` otherwise.
    """
    if not sys.strictly_proper:
        raise ValueError("impulse response of a system with direct feedthrough contains a delta")
    if h <= 0 or T < 0:
        raise ValueError("need h > 0 and T >= 0")
    steps = int(round(T / h))
    t = np.arange(steps + 1) * h
    E = sla.expm(sys.A * h)
    X = np.empty((steps + 1,) + sys.B.shape)
    X[0] = sys.B
    for k in range(steps):
        X[k + 1] = E @ X[k]
    y = np.einsum("pn,tnm->tpm", sys.C, X)
    return t, (y[:, 0, 0] if sys.is_siso else y)


_BLOCK = 64


def _abs_trapz(y, h):
    """Trapezoid of |y| along axis 0, splitting cells at sign changes."""
    a, b = y[:-1], y[1:]
    same = a * b >= 0
    plain = 0.5 * h * (np.abs(a) + np.abs(b))
    denom = np.where(same, 1.0, np.abs(a) + np.abs(b))
    split = 0.5 * h * (a * a + b * b) / denom
    return np.where(same, plain, split).sum(axis=0)


def l1_gain(sys: StateSpace, rel_tol=1e-6, return_table=False):
    """L1 norm ``max_i sum_j int_0^inf |h_ij(t)| dt`` of a stable system.

    The impulse response is propagated with cached matrix exponentials and
    integrated by composite trapezoid with step doubling/halving controlled
    by a Richardson estimate. Integration stops once a certified tail bound,
    derived from a shifted Lyapunov function, is below ``rel_tol`` times the
    accumulated integral.
    """
    if not sys.strictly_proper:
        raise ValueError("l1_gain requires a strictly proper system")
    eig = np.linalg.eigvals(sys.A)
    if not np.all(eig.real < -HURWITZ_TOL):
        raise NotHurwitzError(
            "unstable system: a proper LTI system is stable if and only if its "
            f"impulse response is absolutely integrable; {_spectral_diagnostic(sys.A)}")
    n = sys.n
    p, m = sys.shape
    alpha = -eig.real.max()
    rho = np.abs(eig).max()

    # Tail certificate: V(x) = x^T P x decays at rate 2*beta for beta < alpha.
    beta = 0.9 * alpha
    P = sla.solve_continuous_lyapunov((sys.A + beta * np.eye(n)).T, -np.eye(n))
    P = 0.5 * (P + P.T)
    L = np.linalg.cholesky(P)  # P = L L^T
    # |c^T x| <= ||L^{-1} c|| * ||x||_P
    c_scale = np.linalg.norm(np.linalg.solve(L, sys.C.T), axis=0)  # (p,)

    step = 0.5 * np.sqrt(rel_tol) / rho
    cache = {}

    def powers(hh):
        key = float(hh)
        if key not in cache:
            E = sla.expm(sys.A * hh)
            out = np.empty((2 * _BLOCK + 1, n, n))
            out[0] = np.eye(n)
            for j in range(1, 2 * _BLOCK + 1):
                out[j] = E @ out[j - 1]
            cache[key] = out
            if len(cache) > 32:
                cache.pop(next(iter(cache)))
        return cache[key]

    X = sys.B.copy()
    total = np.zeros((p, m))
    t = 0.0
    for _ in range(200000):
        Epow = powers(0.5 * step)
        Xs = np.einsum("jkn,nm->jkm", Epow, X)  # states at half-steps
        Y = np.einsum("pn,jnm->jpm", sys.C, Xs)
        fine = _abs_trapz(Y, 0.5 * step)
        coarse = _abs_trapz(Y[::2], step)
        err = np.abs(fine - coarse) / 3.0
        scale = np.maximum(fine, 1e-300)
        ratio = np.max(err / (0.25 * rel_tol * scale + 1e-300 + 1e-3 * rel_tol * max(total.max(), fine.max())))
        if ratio > 1.0 and step > 1e-14 * (1.0 + t):
            step *= 0.5
            continue
        total += fine
        X = Xs[-1]
        t += _BLOCK * step
        x_p = np.sqrt(np.einsum("nm,nk,km->m", X, P, X))  # (m,)
        tail = np.outer(c_scale, x_p) / beta
        row_total = total.sum(axis=1)
        if np.all(tail.sum(axis=1) <= 0.5 * rel_tol * np.maximum(row_total, 1e-300)) or \
                np.all(tail <= 1e-300):
            break
        if ratio < 1.0 / 64.0:
            step *= 2.0
    else:
        raise RuntimeError("l1_gain did not converge")
    rows = total.sum(axis=1)
    value = float(rows.max())
    return (value, total) if return_table else value


def hbar_realization(A_m, b, theta) -> StateSpace:
    """``(sI - A_m - b theta^T)^{-1} b`` with the full state as output."""
    A_m = np.atleast_2d(np.asarray(A_m, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    theta = np.asarray(theta, dtype=float).ravel()
    n = A_m.shape[0]
    if b.size != n or theta.size != n:
        raise ValueError("dimension mismatch between A_m, b and theta")
    return StateSpace(A_m + np.outer(b, theta), b, np.eye(n))
