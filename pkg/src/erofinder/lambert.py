"""Multi-revolution Lambert solver (Lancaster-Blanchard formulation, Izzo's
Householder iteration).

The iteration variable ``x`` parametrises the transfer conic; for ``revs >= 1``
two solutions share the same time of flight and are labelled ``low`` (x left
of the minimum-time point) and ``high`` (x right of it).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

LOW = 0
HIGH = 1
_BRANCHES = {"low": LOW, "high": HIGH}

MAX_ITER = 60
X_TOL = 1e-12
COLLINEAR_TOL = 1e-6


class LambertError(ValueError):
    """No Lambert solution for the requested revolutions / time of flight."""


@dataclass(frozen=True)
class LambertSolution:
    v1: np.ndarray
    v2: np.ndarray
    revs: int
    branch: str
    iterations: int


@njit(cache=True)
def _hyp2f1b(x):
    # 2F1(3, 1, 5/2, x) for Battin's series near x = 1
    if x >= 1.0:
        return np.inf
    res = 1.0
    term = 1.0
    j = 0
    while True:
        term = term * (3.0 + j) * (1.0 + j) / (2.5 + j) * x / (j + 1)
        res_old = res
        res += term
        j += 1
        if res_old == res or j > 1000:
            return res


@njit(cache=True)
def _tof(x, lam, N):
    """Nondimensional time of flight T(x) for N complete revolutions."""
    battin = 0.01
    lagrange = 0.2
    dist = abs(x - 1.0)
    if lagrange > dist > battin:
        a = 1.0 / (1.0 - x * x)
        if a > 0:
            alfa = 2.0 * math.acos(x)
            beta = 2.0 * math.asin(math.sqrt(lam * lam / a))
            if lam < 0.0:
                beta = -beta
            return a * math.sqrt(a) * ((alfa - math.sin(alfa)) - (beta - math.sin(beta))
                                       + 2.0 * math.pi * N) / 2.0
        alfa = 2.0 * math.acosh(x)
        beta = 2.0 * math.asinh(math.sqrt(-lam * lam / a))
        if lam < 0.0:
            beta = -beta
        return -a * math.sqrt(-a) * ((beta - math.sinh(beta)) - (alfa - math.sinh(alfa))) / 2.0
    K = lam * lam
    E = x * x - 1.0
    rho = abs(E)
    z = math.sqrt(1.0 + K * E)
    if dist < battin:
        eta = z - lam * x
        S1 = 0.5 * (1.0 - lam - x * eta)
        Q = 4.0 / 3.0 * _hyp2f1b(S1)
        return (eta ** 3 * Q + 4.0 * lam * eta) / 2.0 + N * math.pi / rho ** 1.5
    y = math.sqrt(rho)
    g = x * z - lam * E
    if E < 0.0:
        d = N * math.pi + math.acos(max(-1.0, min(1.0, g)))
    else:
        f = y * (z - lam * x)
        d = math.log(f + g)
    return (x - lam * z - d / y) / E


@njit(cache=True)
def _dtdx(x, T, lam):
    l2 = lam * lam
    l3 = l2 * lam
    umx2 = 1.0 - x * x
    y = math.sqrt(1.0 - l2 * umx2)
    y2 = y * y
    y3 = y2 * y
    d1 = 1.0 / umx2 * (3.0 * T * x - 2.0 + 2.0 * l3 * x / y)
    d2 = 1.0 / umx2 * (3.0 * T + 5.0 * x * d1 + 2.0 * (1.0 - l2) * l3 / y3)
    d3 = 1.0 / umx2 * (7.0 * x * d2 + 8.0 * d1 - 6.0 * (1.0 - l2) * l2 * l3 * x / y3 / y2)
    return d1, d2, d3


@njit(cache=True)
def _householder(T, x0, N, lam, tol, max_iter):
    x = x0
    it = 0
    for it in range(max_iter):
        tof = _tof(x, lam, N)
        d1, d2, d3 = _dtdx(x, tof, lam)
        delta = tof - T
        d1sq = d1 * d1
        xnew = x - delta * (d1sq - delta * d2 / 2.0) / (d1 * (d1sq - delta * d2) + d3 * delta * delta / 6.0)
        err = abs(x - xnew)
        x = xnew
        if err < tol or not math.isfinite(x):
            break
    return x, it + 1


@njit(cache=True)
def _tmin(lam, N):
    """Minimum T and its x for N revolutions (Halley iteration)."""
    if 1.0 - lam * lam < 1e-14:
        # coincident endpoints: T(x) has a kink at its minimum x = 0
        return _tof(0.0, lam, N), 0.0
    T00 = math.acos(lam) + lam * math.sqrt(1.0 - lam * lam)
    x = 0.0
    T = T00 + N * math.pi
    for _ in range(MAX_ITER):
        d1, d2, d3 = _dtdx(x, T, lam)
        if d1 == 0.0:
            break
        xn = x - d1 * d2 / (d2 * d2 - d1 * d3 / 2.0)
        if abs(xn - x) < 1e-14:
            x = xn
            T = _tof(x, lam, N)
            break
        x = xn
        T = _tof(x, lam, N)
    return T, x


@njit(cache=True)
def solve_x(lam, T, N, branch):
    """Iteration variable for (N, branch). Returns (x, iterations, ok)."""
    if N == 0:
        T00 = math.acos(lam) + lam * math.sqrt(1.0 - lam * lam)
        T1 = 2.0 / 3.0 * (1.0 - lam ** 3)
        if T >= T00:
            x0 = -(T - T00) / (T - T00 + 4.0)
        elif T <= T1:
            x0 = T1 * (T1 - T) / (2.0 / 5.0 * (1.0 - lam ** 5) * T) + 1.0
        else:
            x0 = (T / T00) ** (0.69314718055994529 / math.log(T1 / T00)) - 1.0
        x, it = _householder(T, x0, 0, lam, X_TOL, MAX_ITER)
        return x, it, math.isfinite(x)
    Tmin, xmin = _tmin(lam, N)
    if T < Tmin:
        return np.nan, 0, False
    if branch == LOW:
        tmp = ((N * math.pi + math.pi) / (8.0 * T)) ** (2.0 / 3.0)
        x0 = (tmp - 1.0) / (tmp + 1.0)
    else:
        tmp = ((8.0 * T) / (N * math.pi)) ** (2.0 / 3.0)
        x0 = (tmp - 1.0) / (tmp + 1.0)
    x, it = _householder(T, x0, N, lam, X_TOL, MAX_ITER)
    ok = math.isfinite(x) and abs(x) < 1.0
    # guard against convergence onto the other branch
    if ok and T > Tmin * (1 + 1e-9):
        if branch == LOW and x > xmin:
            ok = False
        if branch == HIGH and x < xmin:
            ok = False
    return x, it, ok


@njit(cache=True)
def lambert_core(r1, r2, tof, mu, N, branch, href):
    """Returns (v1, v2, iterations, ok).

    ``href`` orients the transfer: the orbit normal makes a non-negative dot
    product with it (prograde when href is the ecliptic pole or the departure
    orbit normal). Nearly collinear geometries use ``href`` as the plane normal.
    """
    R1 = math.sqrt(r1[0] ** 2 + r1[1] ** 2 + r1[2] ** 2)
    R2 = math.sqrt(r2[0] ** 2 + r2[1] ** 2 + r2[2] ** 2)
    cvec = r2 - r1
    c = math.sqrt(cvec[0] ** 2 + cvec[1] ** 2 + cvec[2] ** 2)
    s = 0.5 * (R1 + R2 + c)
    ir1 = r1 / R1
    ir2 = r2 / R2
    n = np.empty(3)
    n[0] = ir1[1] * ir2[2] - ir1[2] * ir2[1]
    n[1] = ir1[2] * ir2[0] - ir1[0] * ir2[2]
    n[2] = ir1[0] * ir2[1] - ir1[1] * ir2[0]
    nn = math.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2)
    hn = math.sqrt(href[0] ** 2 + href[1] ** 2 + href[2] ** 2)
    lam2 = max(0.0, 1.0 - c / s)
    lam = math.sqrt(lam2)
    ih = np.empty(3)
    if nn < COLLINEAR_TOL:
        for k in range(3):
            ih[k] = href[k] / hn
        # transfer angle ~0 (lambda ~ +1) or ~pi (lambda ~ 0): sign irrelevant at pi
    else:
        sgn = 1.0
        if n[0] * href[0] + n[1] * href[1] + n[2] * href[2] < 0.0:
            sgn = -1.0
            lam = -lam
        for k in range(3):
            ih[k] = sgn * n[k] / nn
    it1 = np.empty(3)
    it2 = np.empty(3)
    it1[0] = ih[1] * ir1[2] - ih[2] * ir1[1]
    it1[1] = ih[2] * ir1[0] - ih[0] * ir1[2]
    it1[2] = ih[0] * ir1[1] - ih[1] * ir1[0]
    it2[0] = ih[1] * ir2[2] - ih[2] * ir2[1]
    it2[1] = ih[2] * ir2[0] - ih[0] * ir2[2]
    it2[2] = ih[0] * ir2[1] - ih[1] * ir2[0]
    T = math.sqrt(2.0 * mu / s ** 3) * tof
    x, iters, ok = solve_x(lam, T, N, branch)
    v1 = np.full(3, np.nan)
    v2 = np.full(3, np.nan)
    if not ok:
        return v1, v2, iters, False
    gamma = math.sqrt(mu * s / 2.0)
    if c > 1e-14 * s:
        rho = (R1 - R2) / c
        sigma = math.sqrt(max(0.0, 1.0 - rho * rho))
    else:
        rho = 0.0
        sigma = 1.0
    y = math.sqrt(1.0 - lam2 + lam2 * x * x)
    vr1 = gamma * ((lam * y - x) - rho * (lam * y + x)) / R1
    vr2 = -gamma * ((lam * y - x) + rho * (lam * y + x)) / R2
    vt = gamma * sigma * (y + lam * x)
    for k in range(3):
        v1[k] = vr1 * ir1[k] + vt / R1 * it1[k]
        v2[k] = vr2 * ir2[k] + vt / R2 * it2[k]
    return v1, v2, iters, True


_ZHAT = np.array([0.0, 0.0, 1.0])


def lambert(r1, r2, tof: float, mu: float, revs: int = 0, branch: str = "low",
            href=None) -> LambertSolution:
    """Solve Lambert's problem for a prograde transfer.

    ``branch`` is ignored for ``revs == 0``. Raises :class:`LambertError` when
    the time of flight is below the minimum for ``revs`` revolutions.
    """
    if tof <= 0:
        raise LambertError("time of flight must be positive")
    if revs < 0:
        raise LambertError("revs must be non-negative")
    r1 = np.ascontiguousarray(r1, dtype=float)
    r2 = np.ascontiguousarray(r2, dtype=float)
    h = _ZHAT if href is None else np.ascontiguousarray(href, dtype=float)
    b = _BRANCHES[branch] if revs > 0 else LOW
    v1, v2, iters, ok = lambert_core(r1, r2, float(tof), float(mu), int(revs), b, h)
    if not ok:
        raise LambertError(f"no {branch} solution with {revs} revolutions for this time of flight")
    return LambertSolution(v1, v2, int(revs), branch if revs > 0 else "low", int(iters))


def min_tof(r1, r2, mu: float, revs: int, href=None) -> float:
    """Minimum time of flight admitting ``revs`` complete revolutions."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    R1, R2 = np.linalg.norm(r1), np.linalg.norm(r2)
    c = np.linalg.norm(r2 - r1)
    s = 0.5 * (R1 + R2 + c)
    lam = math.sqrt(max(0.0, 1.0 - c / s))
    h = np.array([0, 0, 1.0]) if href is None else np.asarray(href, dtype=float)
    n = np.cross(r1, r2)
    if np.linalg.norm(n) / (R1 * R2) >= COLLINEAR_TOL and np.dot(n, h) < 0:
        lam = -lam
    if revs == 0:
        return 0.0
    T, _ = _tmin(lam, revs)
    return T / math.sqrt(2.0 * mu / s**3)
