"""Compiled fixed-step RK4 loops.

State layouts (flat float64 vectors):

* controller: ``[xhat (n), theta_hat (n), sigma_hat, omega_hat, chi (m)]``
* closed loop: ``[x (n), controller...]``

Delayed signals are read from ring buffers holding grid samples; RK4 stages
at half steps use 4-point cubic interpolation (3-point near the newest
sample). Samples before the delay has elapsed are zero.
"""
import numpy as np
from numba import njit

SIG_ZERO, SIG_CONST, SIG_SIN, SIG_STEP = 0, 1, 2, 3

STATUS_OK, STATUS_DIVERGED, STATUS_GUARD = 0, 1, 2

# recorded scalar columns of the closed loop
REC_U, REC_SIGHAT, REC_OMHAT, REC_R, REC_SIGMA, REC_RTILDE, REC_ETA = range(7)


@njit(cache=True)
def signal_value(spec, t):
    kind = int(spec[0])
    if kind == SIG_CONST:
        return spec[1]
    if kind == SIG_SIN:
        return spec[1] * np.sin(spec[2] * t + spec[3])
    if kind == SIG_STEP:
        return spec[1] if t >= spec[2] else 0.0
    return 0.0


@njit(cache=True)
def ring_get(ring, j):
    if j < 0:
        return ring[0] * 0.0
    return ring[j % ring.shape[0]]


@njit(cache=True)
def delayed(ring, i, depth, half):
    """Value at grid index ``i - depth`` (+0.5 when ``half``)."""
    j = i - depth
    if not half:
        return ring_get(ring, j)
    if depth >= 2:
        return (-ring_get(ring, j - 1) + 9.0 * ring_get(ring, j)
                + 9.0 * ring_get(ring, j + 1) - ring_get(ring, j + 2)) / 16.0
    return (-ring_get(ring, j - 1) + 6.0 * ring_get(ring, j) + 3.0 * ring_get(ring, j + 1)) / 8.0


@njit(cache=True)
def midpoint(samples, j):
    """Value halfway between ``samples[j]`` and ``samples[j + 1]``."""
    last = samples.shape[0] - 1
    if j + 1 > last:
        return samples[last]
    if j >= 1 and j + 2 <= last:
        return (-samples[j - 1] + 9.0 * samples[j] + 9.0 * samples[j + 1] - samples[j + 2]) / 16.0
    if j >= 1:
        return (-samples[j - 1] + 6.0 * samples[j] + 3.0 * samples[j + 1]) / 8.0
    if j + 2 <= last:
        return (3.0 * samples[j] + 6.0 * samples[j + 1] - samples[j + 2]) / 8.0
    return 0.5 * (samples[j] + samples[j + 1])


@njit(cache=True)
def controller_deriv(zc, xm, r, Am, b, Pb, kg, k, gam, AD, bD, cD, lo, hi, dz):
    """Right-hand side of companion model, adaptive laws and D(s); returns u."""
    n = xm.shape[0]
    m = cD.shape[0]
    ic = 2 * n + 2
    chi_out = 0.0
    for j in range(m):
        chi_out += cD[j] * zc[ic + j]
    u = -k * chi_out
    sg = zc[2 * n]
    om = zc[2 * n + 1]
    thx = 0.0
    e = 0.0
    for i in range(n):
        thx += zc[n + i] * xm[i]
        e += (zc[i] - xm[i]) * Pb[i]
    drive = om * u + thx + sg
    for i in range(n):
        acc = b[i] * drive
        for j in range(n):
            acc += Am[i, j] * zc[j]
        dz[i] = acc
    # estimate rates, gated at the box faces
    for i in range(n + 2):
        if i < n:
            rate = -gam * xm[i] * e
        elif i == n:
            rate = -gam * e
        else:
            rate = -gam * u * e
        est = zc[n + i]
        if (est >= hi[i] and rate > 0.0) or (est <= lo[i] and rate < 0.0):
            rate = 0.0
        dz[n + i] = rate
    ru = drive - kg * r
    for i in range(m):
        acc = bD[i] * ru
        for j in range(m):
            acc += AD[i, j] * zc[ic + j]
        dz[ic + i] = acc
    return u


@njit(cache=True)
def _clip_and_guard(zc, prev, n, lo, hi, guard):
    """Clip estimates to their boxes; True if any moved > ``guard`` box widths."""
    tripped = False
    for i in range(n + 2):
        v = zc[n + i]
        if abs(v - prev[i]) > guard * (hi[i] - lo[i]):
            tripped = True
        if v > hi[i]:
            zc[n + i] = hi[i]
        elif v < lo[i]:
            zc[n + i] = lo[i]
    return tripped


@njit(cache=True)
def controller_rk4(zc, xm, r, h, Am, b, Pb, kg, k, gam, AD, bD, cD, lo, hi, guard=0.2):
    """One RK4 step with the measurement held over the step.

    Returns (u at step start, next state, guard tripped).
    """
    nz = zc.shape[0]
    n = xm.shape[0]
    k1 = np.empty(nz)
    k2 = np.empty(nz)
    k3 = np.empty(nz)
    k4 = np.empty(nz)
    u0 = controller_deriv(zc, xm, r, Am, b, Pb, kg, k, gam, AD, bD, cD, lo, hi, k1)
    controller_deriv(zc + 0.5 * h * k1, xm, r, Am, b, Pb, kg, k, gam, AD, bD, cD, lo, hi, k2)
    controller_deriv(zc + 0.5 * h * k2, xm, r, Am, b, Pb, kg, k, gam, AD, bD, cD, lo, hi, k3)
    controller_deriv(zc + h * k3, xm, r, Am, b, Pb, kg, k, gam, AD, bD, cD, lo, hi, k4)
    prev = zc[n:2 * n + 2].copy()
    out = zc + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    tripped = _clip_and_guard(out, prev, n, lo, hi, guard)
    return u0, out, tripped


@njit(cache=True)
def _loop_deriv(Z, xm, t, theta, om_eff, sig_spec, r_spec, Am, b, Pb, kg, k, gam,
                AD, bD, cD, lo, hi, dZ):
    n = theta.shape[0]
    r = signal_value(r_spec, t)
    u = controller_deriv(Z[n:], xm, r, Am, b, Pb, kg, k, gam, AD, bD, cD, lo, hi, dZ[n:])
    sig = signal_value(sig_spec, t)
    thx = 0.0
    for i in range(n):
        thx += theta[i] * Z[i]
    drive = om_eff * u + thx + sig
    for i in range(n):
        acc = b[i] * drive
        for j in range(n):
            acc += Am[i, j] * Z[j]
        dZ[i] = acc
    return u


@njit(cache=True)
def _delayed_into(out, ring, i, depth, half):
    """In-place variant of :func:`delayed` for vector rings."""
    R = ring.shape[0]
    j = i - depth
    for c in range(out.shape[0]):
        out[c] = 0.0
    if not half:
        if j >= 0:
            for c in range(out.shape[0]):
                out[c] = ring[j % R, c]
        return
    if depth >= 2:
        idx = (j - 1, j, j + 1, j + 2)
        w = (-1.0 / 16.0, 9.0 / 16.0, 9.0 / 16.0, -1.0 / 16.0)
    else:
        idx = (j - 1, j, j + 1, j + 1)
        w = (-1.0 / 8.0, 6.0 / 8.0, 3.0 / 8.0, 0.0)
    for q in range(4):
        jj = idx[q]
        if jj >= 0 and w[q] != 0.0:
            for c in range(out.shape[0]):
                out[c] += w[q] * ring[jj % R, c]


@njit(cache=True)
def _axpy(out, Z, a, K):
    for c in range(Z.shape[0]):
        out[c] = Z[c] + a * K[c]


@njit(cache=True)
def run_closed_loop(Z0, steps, h, depth, record_every, blowup, guard,
                    theta, om_eff, sig_spec, r_spec,
                    Am, b, Pb, kg, k, gam, AD, bD, cD, lo, hi):
    """Adaptive loop with the controller fed the state delayed by ``depth`` steps.

    Returns (times, Z samples, x_d samples, scalar columns, count, status,
    status_step, peak |x|).
    """
    n = theta.shape[0]
    nz = Z0.shape[0]
    ne = n + 2
    nrec = steps // record_every + 2
    T_rec = np.empty(nrec)
    Z_rec = np.empty((nrec, nz))
    XD_rec = np.empty((nrec, n))
    S_rec = np.empty((nrec, 7))
    R = depth + 3
    xring = np.zeros((R, n))
    zring = np.zeros(R)
    Z = Z0.copy()
    Zs = np.empty(nz)
    k1 = np.empty(nz)
    k2 = np.empty(nz)
    k3 = np.empty(nz)
    k4 = np.empty(nz)
    xd = np.empty(n)
    xm = np.empty(n)
    prev = np.empty(ne)
    count = 0
    status = STATUS_OK
    status_step = -1
    peak = 0.0
    for i in range(steps + 1):
        t = i * h
        for j in range(n):
            a = abs(Z[j])
            if a > peak:
                peak = a
        if peak > blowup or not np.isfinite(peak):
            status = STATUS_DIVERGED
            status_step = i
            break
        chi_out = 0.0
        for j in range(cD.shape[0]):
            chi_out += cD[j] * Z[3 * n + 2 + j]
        u = -k * chi_out
        sig = signal_value(sig_spec, t)
        for j in range(n):
            xring[i % R, j] = Z[j]
        zring[i % R] = om_eff * u + sig
        if depth == 0:
            for j in range(n):
                xd[j] = Z[j]
            zd = om_eff * u + sig
        else:
            _delayed_into(xd, xring, i, depth, False)
            zd = zring[(i - depth) % R] if i >= depth else 0.0
        if i % record_every == 0 or i == steps:
            T_rec[count] = t
            for j in range(nz):
                Z_rec[count, j] = Z[j]
            thx = 0.0
            tx = 0.0
            for j in range(n):
                XD_rec[count, j] = xd[j]
                thx += Z[2 * n + j] * xd[j]
                tx += theta[j] * xd[j]
            sh = Z[3 * n]
            oh = Z[3 * n + 1]
            S_rec[count, REC_U] = u
            S_rec[count, REC_SIGHAT] = sh
            S_rec[count, REC_OMHAT] = oh
            S_rec[count, REC_R] = signal_value(r_spec, t)
            S_rec[count, REC_SIGMA] = sig
            S_rec[count, REC_RTILDE] = oh * u + thx + sh - tx - zd
            S_rec[count, REC_ETA] = zd - om_eff * u - sig
            count += 1
        if i == steps:
            break
        # RK4 stages
        _loop_deriv(Z, xd, t, theta, om_eff, sig_spec, r_spec, Am, b, Pb, kg, k, gam,
                    AD, bD, cD, lo, hi, k1)
        _axpy(Zs, Z, 0.5 * h, k1)
        if depth == 0:
            for j in range(n):
                xm[j] = Zs[j]
        else:
            _delayed_into(xm, xring, i, depth, True)
        _loop_deriv(Zs, xm, t + 0.5 * h, theta, om_eff, sig_spec, r_spec, Am, b, Pb, kg, k,
                    gam, AD, bD, cD, lo, hi, k2)
        _axpy(Zs, Z, 0.5 * h, k2)
        if depth == 0:
            for j in range(n):
                xm[j] = Zs[j]
        _loop_deriv(Zs, xm, t + 0.5 * h, theta, om_eff, sig_spec, r_spec, Am, b, Pb, kg, k,
                    gam, AD, bD, cD, lo, hi, k3)
        _axpy(Zs, Z, h, k3)
        if depth == 0:
            for j in range(n):
                xm[j] = Zs[j]
        else:
            _delayed_into(xm, xring, i + 1, depth, False)
        _loop_deriv(Zs, xm, t + h, theta, om_eff, sig_spec, r_spec, Am, b, Pb, kg, k,
                    gam, AD, bD, cD, lo, hi, k4)
        for j in range(ne):
            prev[j] = Z[2 * n + j]
        for j in range(nz):
            Z[j] += (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        if _clip_and_guard(Z[n:], prev, n, lo, hi, guard):
            status = STATUS_GUARD
            status_step = i + 1
            # keep the offending sample for diagnosis
            T_rec[count] = t + h
            Z_rec[count] = Z
            _delayed_into(xd, xring, i + 1, depth, False)
            XD_rec[count] = xd if depth > 0 else Z[:n]
            S_rec[count] = S_rec[count - 1]
            count += 1
            for j in range(n):
                a = abs(Z[j])
                if a > peak:
                    peak = a
            break
    return T_rec, Z_rec, XD_rec, S_rec, count, status, status_step, peak


@njit(cache=True)
def _ref_deriv(Z, t, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, dZ):
    n = theta.shape[0]
    m = cD.shape[0]
    chi_out = 0.0
    for j in range(m):
        chi_out += cD[j] * Z[n + j]
    u = -k * chi_out
    sig = signal_value(sig_spec, t)
    r = signal_value(r_spec, t)
    thx = 0.0
    for i in range(n):
        thx += theta[i] * Z[i]
    drive = om * u + thx + sig
    for i in range(n):
        acc = b[i] * drive
        for j in range(n):
            acc += Am[i, j] * Z[j]
        dZ[i] = acc
    ru = drive - kg * r
    for i in range(m):
        acc = bD[i] * ru
        for j in range(m):
            acc += AD[i, j] * Z[n + j]
        dZ[n + i] = acc
    return u


@njit(cache=True)
def run_reference(Z0, steps, h, record_every, theta, om, sig_spec, r_spec,
                  Am, b, kg, k, AD, bD, cD):
    """Non-adaptive reference loop; state ``[x_ref (n), chi (m)]``."""
    nz = Z0.shape[0]
    nrec = steps // record_every + 2
    T_rec = np.empty(nrec)
    Z_rec = np.empty((nrec, nz))
    U_rec = np.empty(nrec)
    Z = Z0.copy()
    k1 = np.empty(nz)
    k2 = np.empty(nz)
    k3 = np.empty(nz)
    k4 = np.empty(nz)
    count = 0
    for i in range(steps + 1):
        t = i * h
        u = _ref_deriv(Z, t, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, k1)
        if i % record_every == 0 or i == steps:
            T_rec[count] = t
            Z_rec[count] = Z
            U_rec[count] = u
            count += 1
        if i == steps:
            break
        _ref_deriv(Z + 0.5 * h * k1, t + 0.5 * h, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, k2)
        _ref_deriv(Z + 0.5 * h * k2, t + 0.5 * h, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, k3)
        _ref_deriv(Z + h * k3, t + h, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, k4)
        Z = Z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return T_rec[:count], Z_rec[:count], U_rec[:count]


@njit(cache=True)
def _lti_deriv(Z, zld, rt, t, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, dZ):
    """State ``[x_l (n), q_v (m), q_eps (m)]``; returns (u_l, eps_l)."""
    n = theta.shape[0]
    m = cD.shape[0]
    ov = 0.0
    oe = 0.0
    for j in range(m):
        ov += cD[j] * Z[n + j]
        oe += cD[j] * Z[n + m + j]
    ov *= k
    oe *= k
    ul = ov - oe
    r = signal_value(r_spec, t)
    thx = 0.0
    for i in range(n):
        thx += theta[i] * Z[i]
    # input of the u_l filter: k_g r - theta^T x_l - sigma - eta_l
    w = kg * r - thx - zld + om * ul
    for i in range(n):
        acc = b[i] * (thx + zld)
        for j in range(n):
            acc += Am[i, j] * Z[j]
        dZ[i] = acc
    for i in range(m):
        acc_v = bD[i] * (w - om * ov)
        acc_e = bD[i] * (rt - om * oe)
        for j in range(m):
            acc_v += AD[i, j] * Z[n + j]
            acc_e += AD[i, j] * Z[n + m + j]
        dZ[n + i] = acc_v
        dZ[n + m + i] = acc_e
    return ul, oe


@njit(cache=True)
def run_lti_delayed(steps, h, depth, rtilde, theta, om, sig_spec, r_spec,
                    Am, b, kg, k, AD, bD, cD):
    """Delayed LTI loop driven by sampled ``rtilde`` (length steps + 1).

    Returns (Z samples, columns [u_l, eps_l, zeta_l, zeta_ld, eta_l]).
    """
    n = theta.shape[0]
    m = cD.shape[0]
    nz = n + 2 * m
    Z = np.zeros(nz)
    Z_rec = np.empty((steps + 1, nz))
    S_rec = np.empty((steps + 1, 5))
    R = depth + 3
    ring = np.zeros(R)
    k1 = np.empty(nz)
    k2 = np.empty(nz)
    k3 = np.empty(nz)
    k4 = np.empty(nz)
    dummy = np.empty(nz)
    for i in range(steps + 1):
        t = i * h
        sig = signal_value(sig_spec, t)
        ul, el = _lti_deriv(Z, 0.0, 0.0, t, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, dummy)
        zl = om * ul + sig
        ring[i % R] = zl
        zld0 = zl if depth == 0 else delayed(ring, i, depth, False)
        Z_rec[i] = Z
        S_rec[i, 0] = ul
        S_rec[i, 1] = el
        S_rec[i, 2] = zl
        S_rec[i, 3] = zld0
        S_rec[i, 4] = zld0 - om * ul - sig
        if i == steps:
            break
        rt0 = rtilde[i]
        rth = midpoint(rtilde, i)
        rt1 = rtilde[i + 1]
        if depth == 0:
            # undelayed: zeta_l is algebraic in the state, evaluate per stage
            _stage_nodelay(Z, rt0, t, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, k1)
            _stage_nodelay(Z + 0.5 * h * k1, rth, t + 0.5 * h, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, k2)
            _stage_nodelay(Z + 0.5 * h * k2, rth, t + 0.5 * h, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, k3)
            _stage_nodelay(Z + h * k3, rt1, t + h, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, k4)
        else:
            zh = delayed(ring, i, depth, True)
            z1 = delayed(ring, i + 1, depth, False)
            _lti_deriv(Z, zld0, rt0, t, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, k1)
            _lti_deriv(Z + 0.5 * h * k1, zh, rth, t + 0.5 * h, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, k2)
            _lti_deriv(Z + 0.5 * h * k2, zh, rth, t + 0.5 * h, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, k3)
            _lti_deriv(Z + h * k3, z1, rt1, t + h, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, k4)
        Z = Z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Z_rec, S_rec


@njit(cache=True)
def _stage_nodelay(Z, rt, t, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, dZ):
    n = theta.shape[0]
    m = cD.shape[0]
    ov = 0.0
    oe = 0.0
    for j in range(m):
        ov += cD[j] * Z[n + j]
        oe += cD[j] * Z[n + m + j]
    ul = k * (ov - oe)
    zl = om * ul + signal_value(sig_spec, t)
    _lti_deriv(Z, zl, rt, t, theta, om, sig_spec, r_spec, Am, b, kg, k, AD, bD, cD, dZ)
