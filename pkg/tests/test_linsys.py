import math

import numpy as np
import pytest

from l1margin.linsys import (FrequencyGrid, NotHurwitzError, RationalTF, StateSpace, charpoly,
                             freq_response, hbar_realization, impulse_response, is_hurwitz,
                             l1_gain, lyapunov_solve, spectral_summary, ss_to_tf, tf_to_ss)

from conftest import A_M, B, C_OUT, THETA


def kron_lyapunov(A, Q):
    """Independent oracle: solve (I kron A^T + A^T kron I) vec(P) = -vec(Q)."""
    n = A.shape[0]
    K = np.kron(np.eye(n), A.T) + np.kron(A.T, np.eye(n))
    return np.linalg.solve(K, -Q.reshape(-1, order="F")).reshape(n, n, order="F")


# lyapunov ------------------------------------------------------------------

def test_lyapunov_scalar():
    assert lyapunov_solve([[-1.0]], [[2.0]])[0, 0] == pytest.approx(1.0, abs=1e-14)


def test_lyapunov_arm_matches_kronecker_oracle():
    P = lyapunov_solve(A_M, np.eye(2))
    np.testing.assert_allclose(P, kron_lyapunov(A_M, np.eye(2)), rtol=1e-12, atol=1e-14)
    assert np.abs(A_M.T @ P + P @ A_M + np.eye(2)).max() <= 1e-10
    assert np.abs(P - P.T).max() <= 1e-12


def test_lyapunov_rejects_unstable_and_asymmetric():
    with pytest.raises(NotHurwitzError, match="eigenvalues"):
        lyapunov_solve([[1.0]], [[1.0]])
    with pytest.raises(ValueError):
        lyapunov_solve(A_M, [[1.0, 0.5], [0.0, 1.0]])


# hurwitz -------------------------------------------------------------------

def test_is_hurwitz_cases():
    assert is_hurwitz(A_M)
    assert not is_hurwitz(np.zeros((2, 2)))
    M = A_M + np.outer(B, THETA)
    np.testing.assert_allclose(M, [[0, 1], [1, 0.6]])
    # quadratic-formula oracle: s^2 - 0.6 s - 1
    roots = [(0.6 + s * math.sqrt(0.36 + 4)) / 2 for s in (1, -1)]
    assert max(roots) > 0
    assert not is_hurwitz(M)
    np.testing.assert_allclose(sorted(np.linalg.eigvals(M).real), sorted(roots), rtol=1e-12)


# frequency response ----------------------------------------------------------

def test_freq_response_integrator_and_lowpass():
    g = freq_response(RationalTF([60.0], [0.0, 1.0]), 60.0)
    assert abs(g) == pytest.approx(1.0, rel=1e-14)
    assert np.angle(g) == pytest.approx(-math.pi / 2, abs=1e-14)
    for w in (0.1, 7.0, 600.0):
        c = freq_response(RationalTF([60.0], [60.0, 1.0]), w)
        assert abs(c) == pytest.approx(60 / math.sqrt(w * w + 3600), rel=1e-13)


def test_freq_response_two_paths_agree():
    sys = StateSpace(A_M, B, C_OUT)
    tf = ss_to_tf(sys)
    a, b = freq_response(sys, 1.0), freq_response(tf, 1.0)
    assert abs(a - b) <= 1e-10 * abs(b)
    assert b == pytest.approx(1.0 / (-1 + 1.4j + 1), rel=1e-12)


def test_freq_response_pole_on_axis():
    with pytest.raises(ZeroDivisionError):
        freq_response(RationalTF([1.0], [1.0, 0.0, 1.0]), 1.0)
    with pytest.raises(ValueError):
        freq_response(RationalTF([1.0], [1.0, 1.0]), 0.0)


# conversions -----------------------------------------------------------------

def test_charpoly_and_conversions():
    den, _ = charpoly(A_M)
    np.testing.assert_allclose(den, [1.0, 1.4, 1.0])
    tf = RationalTF([2.0, 3.0], [5.0, 4.0, 1.0])
    back = ss_to_tf(tf_to_ss(tf))
    np.testing.assert_allclose(back.num, tf.num, atol=1e-12)
    np.testing.assert_allclose(back.den, tf.den, atol=1e-12)


def test_hbar_realization_symbolic_oracle():
    assert np.array_equal(hbar_realization(A_M, B, [0, 0]).A, A_M)
    Hb = hbar_realization(A_M, B, THETA)
    np.testing.assert_allclose(Hb.A, [[0, 1], [1, 0.6]])
    # (sI - A)^{-1} b = [1; s] / (s^2 - 0.6 s - 1)
    t1, t2 = ss_to_tf(Hb, output=0), ss_to_tf(Hb, output=1)
    np.testing.assert_allclose(t1.den, [-1.0, -0.6, 1.0], atol=1e-12)
    np.testing.assert_allclose(t1.num, [1.0], atol=1e-12)
    np.testing.assert_allclose(t2.num, [0.0, 1.0], atol=1e-12)


# impulse response ------------------------------------------------------------

def test_impulse_first_order():
    t, y = impulse_response(StateSpace([[-1.0]], [1.0], [1.0]), 0.01, 5.0)
    assert np.abs(y - np.exp(-t)).max() <= 1e-9


def test_impulse_second_order_closed_form():
    # 1/(s^2 + 1.4 s + 1): roots -0.7 +- i wd
    wd = math.sqrt(1 - 0.49)
    t, y = impulse_response(StateSpace(A_M, B, C_OUT), 0.01, 20.0)
    exact = np.exp(-0.7 * t) * np.sin(wd * t) / wd
    assert np.abs(y - exact).max() <= 1e-8


def test_impulse_zero_horizon_and_feedthrough():
    t, y = impulse_response(StateSpace(A_M, B, [1.0, 1.0]), 0.1, 0.0)
    assert t.size == 1 and y[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        impulse_response(StateSpace([[-1.0]], [1.0], [1.0], 1.0), 0.1, 1.0)


# l1 gain ---------------------------------------------------------------------

@pytest.mark.parametrize("a", [0.5, 60.0])
def test_l1_first_order(a):
    assert l1_gain(StateSpace([[-a]], [a], [1.0])) == pytest.approx(1.0, rel=1e-6)
    assert l1_gain(StateSpace([[-a]], [1.0], [1.0])) == pytest.approx(1.0 / a, rel=1e-6)


def test_l1_second_order_fine_grid_oracle():
    zeta, w0 = 0.7, 1.0
    wd = w0 * math.sqrt(1 - zeta ** 2)
    h = 1e-5
    t = np.arange(0.0, 40.0 + h / 2, h)
    y = np.abs(np.exp(-zeta * w0 * t) * np.sin(wd * t) / wd)
    oracle = h * (y.sum() - 0.5 * (y[0] + y[-1]))
    sys = StateSpace([[0, 1], [-w0 ** 2, -2 * zeta * w0]], [0, 1], [1, 0])
    assert l1_gain(sys) == pytest.approx(oracle, rel=1e-6)


def test_l1_mimo_rows_and_errors():
    sys = StateSpace(-np.eye(2), np.eye(2), [[1.0, 1.0], [0.0, 2.0]])
    assert l1_gain(sys) == pytest.approx(2.0, rel=1e-6)
    with pytest.raises(NotHurwitzError, match="if and only if"):
        l1_gain(StateSpace([[0.5]], [1.0], [1.0]))
    with pytest.raises(ValueError):
        l1_gain(StateSpace([[-1.0]], [1.0], [1.0], 1.0))


# spectral summary --------------------------------------------------------------

def test_spectral_summary():
    s = spectral_summary(np.eye(2), np.eye(2))
    assert (s.lambda_min_P, s.lambda_max_P) == (1.0, 1.0)
    s = spectral_summary(np.diag([1.0, 4.0]), np.eye(2))
    assert (s.lambda_min_P, s.lambda_max_P) == pytest.approx((1.0, 4.0))
    P = lyapunov_solve(A_M, np.eye(2))
    tr, det = np.trace(P), np.linalg.det(P)
    disc = math.sqrt(tr * tr - 4 * det)
    s = spectral_summary(P, np.eye(2))
    assert s.lambda_min_P == pytest.approx((tr - disc) / 2, rel=1e-12)
    assert s.lambda_max_P == pytest.approx((tr + disc) / 2, rel=1e-12)
    with pytest.raises(ValueError):
        spectral_summary(np.diag([1.0, -1.0]), np.eye(2))


def test_frequency_grid_validation():
    assert len(FrequencyGrid.logspace()) == 2000
    with pytest.raises(ValueError):
        FrequencyGrid([1.0, 1.0])
