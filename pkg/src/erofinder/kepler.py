"""Two-body (heliocentric) orbit utilities: Kepler's equation, element
conversions and universal-variable propagation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class KeplerElements:
    """Osculating elements; distances in km unless stated, angles in radians."""

    a: float
    e: float
    i: float
    raan: float
    argp: float
    nu: float

    @property
    def perihelion(self) -> float:
        return self.a * (1.0 - self.e)

    @property
    def aphelion(self) -> float:
        return self.a * (1.0 + self.e)

    @property
    def longitude_of_perihelion(self) -> float:
        return (self.raan + self.argp) % TWO_PI


@njit(cache=True)
def solve_kepler(M, e, tol=1e-14):
    """Eccentric anomaly for mean anomaly ``M`` (elliptic orbits)."""
    M = M % TWO_PI
    E = M + e * math.sin(M) if e < 0.8 else math.pi
    for _ in range(60):
        f = E - e * math.sin(E) - M
        fp = 1.0 - e * math.cos(E)
        dE = -f / fp
        # Halley correction
        dE = -f / (fp + 0.5 * dE * e * math.sin(E))
        E += dE
        if abs(dE) < tol:
            break
    return E


@njit(cache=True)
def true_from_mean(M, e):
    E = solve_kepler(M, e)
    return 2.0 * math.atan2(math.sqrt(1 + e) * math.sin(E / 2), math.sqrt(1 - e) * math.cos(E / 2))


@njit(cache=True)
def mean_from_true(nu, e):
    E = 2.0 * math.atan2(math.sqrt(1 - e) * math.sin(nu / 2), math.sqrt(1 + e) * math.cos(nu / 2))
    return (E - e * math.sin(E)) % TWO_PI


@njit(cache=True)
def elements_to_state(a, e, i, raan, argp, nu, mu):
    p = a * (1.0 - e * e)
    r = p / (1.0 + e * math.cos(nu))
    h = math.sqrt(mu * p)
    cO, sO = math.cos(raan), math.sin(raan)
    ci, si = math.cos(i), math.sin(i)
    u = argp + nu
    cu, su = math.cos(u), math.sin(u)
    out = np.empty(6)
    out[0] = r * (cO * cu - sO * su * ci)
    out[1] = r * (sO * cu + cO * su * ci)
    out[2] = r * su * si
    # velocity in the perifocal-rotated basis
    vr = mu / h * e * math.sin(nu)
    vt = h / r
    out[3] = vr * out[0] / r + vt * (-cO * su - sO * cu * ci)
    out[4] = vr * out[1] / r + vt * (-sO * su + cO * cu * ci)
    out[5] = vr * out[2] / r + vt * (cu * si)
    return out


@njit(cache=True)
def state_to_elements(rv, mu):
    """Returns array [a, e, i, raan, argp, nu] (radians)."""
    r = rv[:3]
    v = rv[3:6]
    rn = math.sqrt(r[0] ** 2 + r[1] ** 2 + r[2] ** 2)
    v2 = v[0] ** 2 + v[1] ** 2 + v[2] ** 2
    hx = r[1] * v[2] - r[2] * v[1]
    hy = r[2] * v[0] - r[0] * v[2]
    hz = r[0] * v[1] - r[1] * v[0]
    hn = math.sqrt(hx * hx + hy * hy + hz * hz)
    rdv = r[0] * v[0] + r[1] * v[1] + r[2] * v[2]
    ex = ((v2 - mu / rn) * r[0] - rdv * v[0]) / mu
    ey = ((v2 - mu / rn) * r[1] - rdv * v[1]) / mu
    ez = ((v2 - mu / rn) * r[2] - rdv * v[2]) / mu
    e = math.sqrt(ex * ex + ey * ey + ez * ez)
    energy = 0.5 * v2 - mu / rn
    a = -mu / (2.0 * energy)
    i = math.acos(max(-1.0, min(1.0, hz / hn)))
    nx = -hy
    ny = hx
    nn = math.sqrt(nx * nx + ny * ny)
    eps = 1e-11
    if nn > eps * hn:
        raan = math.atan2(ny, nx) % TWO_PI
    else:
        # equatorial: node undefined, take raan = 0 and measure from x axis
        raan = 0.0
        nx, ny, nn = 1.0, 0.0, 1.0
    if e > eps:
        # argument of perihelion measured in the orbit plane from the node
        cw = (nx * ex + ny * ey) / (nn * e)
        # sign from the component along h x n (n has no z part)
        sx = -hz * ny
        sy = hz * nx
        sz = hx * ny - hy * nx
        sw = (sx * ex + sy * ey + sz * ez) / (hn * nn * e)
        argp = math.atan2(sw, cw) % TWO_PI
        nu = math.atan2(hn * rdv / (mu * rn), hn * hn / (mu * rn) - 1.0)
    else:
        argp = 0.0
        cu = (nx * r[0] + ny * r[1]) / (nn * rn)
        sx = -hz * ny
        sy = hz * nx
        sz = hx * ny - hy * nx
        su = (sx * r[0] + sy * r[1] + sz * r[2]) / (hn * nn * rn)
        nu = math.atan2(su, cu)
    out = np.empty(6)
    out[0] = a
    out[1] = e
    out[2] = i
    out[3] = raan
    out[4] = argp
    out[5] = nu % TWO_PI
    return out


@njit(cache=True)
def _stumpff(z):
    if z > 1e-8:
        sz = math.sqrt(z)
        return (1.0 - math.cos(sz)) / z, (sz - math.sin(sz)) / (sz * z)
    if z < -1e-8:
        sz = math.sqrt(-z)
        return (math.cosh(sz) - 1.0) / (-z), (math.sinh(sz) - sz) / (sz * (-z))
    return 0.5 - z / 24.0 + z * z / 720.0, 1.0 / 6.0 - z / 120.0 + z * z / 5040.0


@njit(cache=True)
def propagate_universal(rv, dt, mu):
    """Universal-variable Kepler propagation of a Cartesian state by ``dt``."""
    r0 = rv[:3]
    v0 = rv[3:6]
    rn0 = math.sqrt(r0[0] ** 2 + r0[1] ** 2 + r0[2] ** 2)
    v2 = v0[0] ** 2 + v0[1] ** 2 + v0[2] ** 2
    vr0 = (r0[0] * v0[0] + r0[1] * v0[1] + r0[2] * v0[2]) / rn0
    alpha = 2.0 / rn0 - v2 / mu
    smu = math.sqrt(mu)
    if dt == 0.0:
        return rv.copy()
    if alpha > 1e-12:
        # remove whole periods, they map to themselves
        period = TWO_PI / math.sqrt(mu * alpha ** 3)
        dt_red = dt - period * math.floor(dt / period)
        if dt_red > 0.5 * period:
            dt_red -= period
        chi = smu * alpha * dt_red
    else:
        dt_red = dt
        chi = smu * abs(alpha) * dt if alpha != 0 else smu * dt / rn0
    for _ in range(100):
        z = alpha * chi * chi
        C, S = _stumpff(z)
        F = (rn0 * vr0 / smu * chi * chi * C + (1.0 - alpha * rn0) * chi ** 3 * S
             + rn0 * chi - smu * dt_red)
        dF = (rn0 * vr0 / smu * chi * (1.0 - alpha * chi * chi * S)
              + (1.0 - alpha * rn0) * chi * chi * C + rn0)
        step = F / dF
        chi -= step
        if abs(step) < 1e-13 * max(1.0, abs(chi)):
            break
    z = alpha * chi * chi
    C, S = _stumpff(z)
    f = 1.0 - chi * chi / rn0 * C
    g = dt_red - chi ** 3 * S / smu
    out = np.empty(6)
    for k in range(3):
        out[k] = f * r0[k] + g * v0[k]
    rn = math.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2)
    fd = smu / (rn * rn0) * (alpha * chi ** 3 * S - chi)
    gd = 1.0 - chi * chi / rn * C
    for k in range(3):
        out[3 + k] = fd * r0[k] + gd * v0[k]
    return out


def elements_from_state(rv, mu) -> KeplerElements:
    el = state_to_elements(np.ascontiguousarray(rv, dtype=float), mu)
    return KeplerElements(*map(float, el))


def state_from_elements(el: KeplerElements, mu) -> np.ndarray:
    return elements_to_state(el.a, el.e, el.i, el.raan, el.argp, el.nu, mu)


def orbit_period(a, mu):
    return TWO_PI * math.sqrt(a**3 / mu)
