"""Rotating (barycentric, nondimensional) <-> heliocentric ecliptic inertial frames.

Earth moves on a circle of 1 AU, so the rotating frame's x axis points at
heliocentric longitude ``Constants.earth_longitude(mjd)``.
"""
from __future__ import annotations

import numpy as np

from erofinder.constants import DEFAULT, Constants
from erofinder.cr3bp.dynamics import as_array


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return c, s


def rotating_to_heliocentric(s, mjd, const: Constants = DEFAULT) -> np.ndarray:
    """Rotating state(s) at calendar epoch(s) ``mjd`` -> heliocentric [km, km/s].

    Accepts a single 6-vector or an (N, 6) stack with scalar or (N,) epochs.
    """
    a = as_array(s)
    mu = const.mu
    theta = const.earth_longitude(np.asarray(mjd, dtype=float))
    c, sn = _rot(theta)
    x = a[..., 0] + mu
    y = a[..., 1]
    z = a[..., 2]
    # inertial velocity relative to the Sun: v + omega x (r - r_sun)
    vx = a[..., 3] - y
    vy = a[..., 4] + x
    vz = a[..., 5]
    out = np.empty(np.broadcast(a[..., 0], theta).shape + (6,))
    L, V = const.au, const.velocity_unit
    out[..., 0] = (c * x - sn * y) * L
    out[..., 1] = (sn * x + c * y) * L
    out[..., 2] = z * L
    out[..., 3] = (c * vx - sn * vy) * V
    out[..., 4] = (sn * vx + c * vy) * V
    out[..., 5] = vz * V
    return out


def heliocentric_to_rotating(h, mjd, const: Constants = DEFAULT) -> np.ndarray:
    """Inverse of :func:`rotating_to_heliocentric`."""
    h = np.asarray(h, dtype=float)
    mu = const.mu
    theta = const.earth_longitude(np.asarray(mjd, dtype=float))
    c, sn = _rot(theta)
    L, V = const.au, const.velocity_unit
    X, Y, Z = h[..., 0] / L, h[..., 1] / L, h[..., 2] / L
    VX, VY, VZ = h[..., 3] / V, h[..., 4] / V, h[..., 5] / V
    x = c * X + sn * Y
    y = -sn * X + c * Y
    vx = c * VX + sn * VY
    vy = -sn * VX + c * VY
    out = np.empty(np.broadcast(X, theta).shape + (6,))
    out[..., 0] = x - mu
    out[..., 1] = y
    out[..., 2] = Z
    out[..., 3] = vx + y
    out[..., 4] = vy - x
    out[..., 5] = VZ
    return out
