"""Numba-compiled DOP853 integrator specialised to the CR3BP.

Coefficients are Hairer's DOP853 tableau (taken from scipy). The stepping and
error control mirror ``scipy.integrate.DOP853`` so results are comparable,
but everything runs in nopython mode, which matters for the ~1e5 manifold
propagations a full run needs.

Status codes returned by the kernels:
    0 ok, 1 max steps exceeded, 2 step size underflow, 3 primary proximity,
    4 no section crossing before the time bound.
"""
import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _c

OK = 0
MAX_STEPS = 1
STEP_UNDERFLOW = 2
SINGULARITY = 3
NO_CROSSING = 4

_NS = 12
_A = np.ascontiguousarray(_c.A)
_B = np.ascontiguousarray(_c.B)
_C = np.ascontiguousarray(_c.C)
_E3 = np.ascontiguousarray(_c.E3)
_E5 = np.ascontiguousarray(_c.E5)
_D = np.ascontiguousarray(_c.D)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXP = -1.0 / 8.0
MIN_PRIMARY_DIST = 1e-6


@njit(cache=True)
def rhs(y, mu, out):
    """CR3BP vector field; integrates the 6x6 STM too when len(y) == 42."""
    x = y[0]
    yy = y[1]
    z = y[2]
    dx1 = x + mu
    dx2 = x - 1.0 + mu
    r1sq = dx1 * dx1 + yy * yy + z * z
    r2sq = dx2 * dx2 + yy * yy + z * z
    r1 = np.sqrt(r1sq)
    r2 = np.sqrt(r2sq)
    m1 = 1.0 - mu
    r1_3 = r1sq * r1
    r2_3 = r2sq * r2
    k1 = m1 / r1_3
    k2 = mu / r2_3
    out[0] = y[3]
    out[1] = y[4]
    out[2] = y[5]
    out[3] = 2.0 * y[4] + x - k1 * dx1 - k2 * dx2
    out[4] = -2.0 * y[3] + yy - k1 * yy - k2 * yy
    out[5] = -k1 * z - k2 * z
    if y.shape[0] == 42:
        q1 = 3.0 * m1 / (r1_3 * r1sq)
        q2 = 3.0 * mu / (r2_3 * r2sq)
        uxx = 1.0 - k1 - k2 + q1 * dx1 * dx1 + q2 * dx2 * dx2
        uyy = 1.0 - k1 - k2 + (q1 + q2) * yy * yy
        uzz = -k1 - k2 + (q1 + q2) * z * z
        uxy = (q1 * dx1 + q2 * dx2) * yy
        uxz = (q1 * dx1 + q2 * dx2) * z
        uyz = (q1 + q2) * yy * z
        # phi is row-major 6x6 in y[6:]; dphi = A phi
        for j in range(6):
            p0 = y[6 + j]
            p1 = y[12 + j]
            p2 = y[18 + j]
            p3 = y[24 + j]
            p4 = y[30 + j]
            p5 = y[36 + j]
            out[6 + j] = p3
            out[12 + j] = p4
            out[18 + j] = p5
            out[24 + j] = uxx * p0 + uxy * p1 + uxz * p2 + 2.0 * p4
            out[30 + j] = uxy * p0 + uyy * p1 + uyz * p2 - 2.0 * p3
            out[36 + j] = uxz * p0 + uyz * p1 + uzz * p2


@njit(cache=True)
def _primary_distance(y, mu):
    dx1 = y[0] + mu
    dx2 = y[0] - 1.0 + mu
    s = y[1] * y[1] + y[2] * y[2]
    return min(np.sqrt(dx1 * dx1 + s), np.sqrt(dx2 * dx2 + s))


@njit(cache=True)
def _rk_step(t, y, f, h, mu, K, ynew, tmp):
    """One DOP853 step; fills K[0:13] and returns the error-free update in ynew."""
    n = y.shape[0]
    K[0, :] = f
    for s in range(1, _NS):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += _A[s, j] * K[j, i]
            tmp[i] = y[i] + h * acc
        rhs(tmp, mu, K[s])
    for i in range(n):
        acc = 0.0
        for j in range(_NS):
            acc += _B[j] * K[j, i]
        ynew[i] = y[i] + h * acc
    rhs(ynew, mu, K[_NS])


@njit(cache=True)
def _error_norm(K, h, y, ynew, rtol, atol):
    n = y.shape[0]
    e5 = 0.0
    e3 = 0.0
    for i in range(n):
        sc = atol + max(abs(y[i]), abs(ynew[i])) * rtol
        a5 = 0.0
        a3 = 0.0
        for j in range(_NS + 1):
            a5 += _E5[j] * K[j, i]
            a3 += _E3[j] * K[j, i]
        a5 /= sc
        a3 /= sc
        e5 += a5 * a5
        e3 += a3 * a3
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    denom = e5 + 0.01 * e3
    return abs(h) * e5 / np.sqrt(denom * n)


@njit(cache=True)
def _initial_step(t0, y0, f0, direction, mu, rtol, atol):
    n = y0.shape[0]
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + abs(y0[i]) * rtol
        d0 += (y0[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = np.empty(n)
    rhs(y1, mu, f1)
    d2 = 0.0
    for i in range(n):
        sc = atol + abs(y0[i]) * rtol
        d2 += ((f1[i] - f0[i]) / sc) ** 2
    d2 = np.sqrt(d2 / n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100.0 * h0, h1)


@njit(cache=True)
def _dense_coeffs(t, y, f, h, ynew, fnew, mu, K, F, tmp):
    """Extra stages and interpolation coefficients for the last step."""
    n = y.shape[0]
    K[_NS, :] = fnew
    for s in range(_NS + 1, 16):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += _A[s, j] * K[j, i]
            tmp[i] = y[i] + h * acc
        rhs(tmp, mu, K[s])
    for i in range(n):
        dy = ynew[i] - y[i]
        F[0, i] = dy
        F[1, i] = h * f[i] - dy
        F[2, i] = 2.0 * dy - h * (fnew[i] + f[i])
        for r in range(4):
            acc = 0.0
            for j in range(16):
                acc += _D[r, j] * K[j, i]
            F[3 + r, i] = h * acc


@njit(cache=True)
def dense_eval(F, y_old, x, out):
    n = y_old.shape[0]
    for i in range(n):
        acc = 0.0
        for k in range(7):
            acc += F[6 - k, i]
            if k % 2 == 0:
                acc *= x
            else:
                acc *= 1.0 - x
        out[i] = acc + y_old[i]


@njit(cache=True)
def _attempt(t, y, f, h_abs, direction, t_bound, mu, rtol, atol, K, ynew, tmp,
             step_rejected_in):
    """Adaptive step. Returns (status, h_taken, h_abs_next)."""
    min_step = 10.0 * abs(np.nextafter(t, direction * np.inf) - t)
    step_rejected = step_rejected_in
    while True:
        if h_abs < min_step:
            return STEP_UNDERFLOW, 0.0, h_abs
        h = h_abs * direction
        t_new = t + h
        if direction * (t_new - t_bound) > 0:
            t_new = t_bound
        h = t_new - t
        h_abs = abs(h)
        _rk_step(t, y, f, h, mu, K, ynew, tmp)
        en = _error_norm(K, h, y, ynew, rtol, atol)
        if en < 1.0:
            if en == 0.0:
                factor = MAX_FACTOR
            else:
                factor = min(MAX_FACTOR, SAFETY * en ** ERR_EXP)
            if step_rejected:
                factor = min(1.0, factor)
            return OK, h, h_abs * factor
        h_abs *= max(MIN_FACTOR, SAFETY * en ** ERR_EXP)
        step_rejected = True


@njit(cache=True)
def integrate(y0, t0, t1, mu, rtol, atol, max_steps):
    """Integrate from t0 to t1; returns (y(t1), status, n_steps)."""
    n = y0.shape[0]
    y = y0.copy()
    if t1 == t0:
        return y, OK, 0
    direction = 1.0 if t1 > t0 else -1.0
    K = np.empty((16, n))
    ynew = np.empty(n)
    tmp = np.empty(n)
    f = np.empty(n)
    rhs(y, mu, f)
    h_abs = _initial_step(t0, y, f, direction, mu, rtol, atol)
    t = t0
    steps = 0
    while direction * (t - t1) < 0:
        if steps >= max_steps:
            return y, MAX_STEPS, steps
        status, h, h_abs = _attempt(t, y, f, h_abs, direction, t1, mu, rtol, atol,
                                    K, ynew, tmp, False)
        if status != OK:
            return y, status, steps
        t = t + h
        if direction * (t - t1) >= 0:
            t = t1
        y[:] = ynew
        f[:] = K[_NS]
        steps += 1
        if _primary_distance(y, mu) < MIN_PRIMARY_DIST:
            return y, SINGULARITY, steps
    return y, OK, steps


@njit(cache=True)
def integrate_eval(y0, t0, t_eval, mu, rtol, atol, max_steps):
    """Integrate and return states at the monotone times ``t_eval`` (dense output)."""
    n = y0.shape[0]
    m = t_eval.shape[0]
    out = np.full((m, n), np.nan)
    y = y0.copy()
    if m == 0:
        return out, OK
    t1 = t_eval[m - 1]
    k = 0
    while k < m and t_eval[k] == t0:
        out[k] = y
        k += 1
    if t1 == t0:
        return out, OK
    direction = 1.0 if t1 > t0 else -1.0
    K = np.empty((16, n))
    F = np.empty((7, n))
    ynew = np.empty(n)
    tmp = np.empty(n)
    f = np.empty(n)
    rhs(y, mu, f)
    h_abs = _initial_step(t0, y, f, direction, mu, rtol, atol)
    t = t0
    steps = 0
    while k < m:
        if steps >= max_steps:
            return out, MAX_STEPS
        status, h, h_abs = _attempt(t, y, f, h_abs, direction, t1, mu, rtol, atol,
                                    K, ynew, tmp, False)
        if status != OK:
            return out, status
        t_new = t + h
        if direction * (t_new - t1) >= 0:
            t_new = t1
        fnew = K[_NS].copy()
        if direction * (t_eval[k] - t_new) <= 0:
            _dense_coeffs(t, y, f, h, ynew, fnew, mu, K, F, tmp)
            while k < m and direction * (t_eval[k] - t_new) <= 0:
                if t_eval[k] == t_new:
                    out[k] = ynew
                else:
                    dense_eval(F, y, (t_eval[k] - t) / h, out[k])
                k += 1
        t = t_new
        y[:] = ynew
        f[:] = fnew
        steps += 1
        if _primary_distance(y, mu) < MIN_PRIMARY_DIST:
            return out, SINGULARITY
    return out, OK


@njit(cache=True)
def section_value(y, mu, c, s):
    """Signed distance to the plane through the Sun at angle atan2(s, c)."""
    return -s * (y[0] + mu) + c * y[1]


@njit(cache=True)
def _in_half_plane(y, mu, c, s):
    return c * (y[0] + mu) + s * y[1] > 0.0


@njit(cache=True)
def _section_rate(y, f, c, s):
    return -s * f[0] + c * f[1]


@njit(cache=True)
def integrate_to_section(y0, t0, t_bound, mu, rtol, atol, max_steps, c, s, tol_g):
    """Integrate until the trajectory crosses the Sun-centred half plane.

    Returns (t_cross, y_cross, status). The crossing is bracketed between
    accepted steps, located on the dense interpolant by Illinois regula falsi,
    re-stepped exactly with a single RK step from the bracketing step start
    and finally polished with Newton iterations on the section function.
    """
    n = y0.shape[0]
    y = y0.copy()
    direction = 1.0 if t_bound > t0 else -1.0
    K = np.empty((16, n))
    F = np.empty((7, n))
    ynew = np.empty(n)
    tmp = np.empty(n)
    yi = np.empty(n)
    f = np.empty(n)
    rhs(y, mu, f)
    h_abs = _initial_step(t0, y, f, direction, mu, rtol, atol)
    t = t0
    g_old = section_value(y, mu, c, s)
    steps = 0
    while direction * (t - t_bound) < 0:
        if steps >= max_steps:
            return t, y, MAX_STEPS
        status, h, h_abs = _attempt(t, y, f, h_abs, direction, t_bound, mu, rtol,
                                    atol, K, ynew, tmp, False)
        if status != OK:
            return t, y, status
        t_new = t + h
        fnew = K[_NS].copy()
        g_new = section_value(ynew, mu, c, s)
        crossed = (g_old < 0.0 and g_new >= 0.0) or (g_old > 0.0 and g_new <= 0.0)
        if crossed and _in_half_plane(ynew, mu, c, s):
            _dense_coeffs(t, y, f, h, ynew, fnew, mu, K, F, tmp)
            # Illinois on x in [0, 1]
            xa = 0.0
            xb = 1.0
            ga = g_old
            gb = g_new
            side = 0
            xr = 1.0
            for _ in range(200):
                xr = (xa * gb - xb * ga) / (gb - ga)
                dense_eval(F, y, xr, yi)
                gr = section_value(yi, mu, c, s)
                if gr == 0.0 or abs(xb - xa) < 1e-15:
                    break
                if gr * gb > 0:
                    xb = xr
                    gb = gr
                    if side == -1:
                        ga *= 0.5
                    side = -1
                else:
                    xa = xr
                    ga = gr
                    if side == 1:
                        gb *= 0.5
                    side = 1
                if abs(gr) < 1e-16:
                    break
            # exact re-step from the bracketing point, then Newton polish
            tc = t + xr * h
            Kx = np.empty((16, n))
            fx = np.empty(n)
            for _ in range(4):
                _rk_step(t, y, f, tc - t, mu, Kx, yi, tmp)
                gval = section_value(yi, mu, c, s)
                if abs(gval) < tol_g:
                    break
                rhs(yi, mu, fx)
                rate = _section_rate(yi, fx, c, s)
                if rate == 0.0:
                    break
                tc = tc - gval / rate
            return tc, yi, OK
        t = t_new
        y[:] = ynew
        f[:] = fnew
        g_old = g_new
        steps += 1
        if _primary_distance(y, mu) < MIN_PRIMARY_DIST:
            return t, y, SINGULARITY
    return t, y, NO_CROSSING
