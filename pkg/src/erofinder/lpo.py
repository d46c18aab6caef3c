"""Libration point orbit families about the Sun-Earth L1/L2 points.

Symmetric periodic orbits are parametrised by a state on the y = 0 plane with
``vx = vz = 0`` (planar and halo orbits) or on the x axis with ``vx = 0``
(vertical orbits), and are closed when the next y = 0 crossing is again
perpendicular.  Families are traced by pseudo-arclength continuation and then
resampled on a uniform Jacobi-constant grid.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from erofinder.constants import DEFAULT as DEFAULT_CONSTANTS
from erofinder.constants import MU_SUN_EARTH
from erofinder.cr3bp import _dop853
from erofinder.cr3bp.dynamics import (
    DEFAULT_TOL,
    MAX_STEPS,
    PropagationError,
    RotatingState,
    _raise_for,
    acceleration,
    equilibrium_points,
    flow_with_stm,
    jacobi_constant,
    propagate,
)

log = logging.getLogger(__name__)

KINDS = ("planar", "vertical", "halo-north", "halo-south")
MAX_CORRECTOR_ITER = 25
CORRECTOR_TOL = 1e-11
DEFAULT_MEMBERS = 200
# (J_min, J_max) per family shape; None = start at the family's own origin.
# Halos stop short of losing hyperbolicity (near J = 3.00021 at both points).
FAMILY_J_RANGE = {
    "planar": (3.0000030032, 3.0007982727),
    "vertical": (3.0000030032, 3.0007982727),
    "halo": (3.00028, None),
}
# lead-in before accepting a crossing, as a fraction of the expected crossing time
_MIN_CROSS_T = 1e-2

# shape -> (free state indices, residual indices at the crossing, crossings per period)
_LAYOUT = {
    "planar": ((0, 4), (3,), 2),
    "halo": ((0, 2, 4), (3, 5), 2),
    "vertical": ((0, 4, 5), (3, 5), 4),
}
_FREE_NAMES = {0: "x", 2: "z", 4: "vy", 5: "vz"}


class CorrectionError(RuntimeError):
    """Differential correction failed to converge."""


class NotHyperbolicError(RuntimeError):
    """Monodromy matrix has no real eigenvalue outside the unit circle."""


def _shape(kind: str) -> str:
    if kind.startswith("halo"):
        return "halo"
    if kind not in _LAYOUT:
        raise ValueError(f"unknown orbit kind {kind!r}")
    return kind


@dataclass(frozen=True)
class PeriodicOrbit:
    """Symmetric periodic orbit.

    ``state`` lies on the y = 0 plane; the stability fields are filled by
    :func:`with_stability` (``eigenvalue`` is the real multiplier > 1).
    """

    state: np.ndarray
    period: float
    jacobi: float
    kind: str
    point: str
    mu: float = MU_SUN_EARTH
    monodromy: np.ndarray | None = None
    eigenvalue: float = math.nan
    stable_eigvec: np.ndarray | None = None
    unstable_eigvec: np.ndarray | None = None

    @property
    def initial_state(self) -> RotatingState:
        return RotatingState.from_array(self.state)

    @property
    def branch(self) -> str | None:
        return self.kind.split("-")[1] if self.kind.startswith("halo") else None

    @property
    def half_crossing_time(self) -> float:
        """Time from the stored state to the next perpendicular crossing."""
        return self.period / _LAYOUT[_shape(self.kind)][2]

    def trajectory(self, n: int = 400, tol: float = DEFAULT_TOL) -> np.ndarray:
        return propagate(self.state, self.period, tol=tol, n_samples=n, mu=self.mu).states

    def extents(self, n: int = 800) -> np.ndarray:
        """Peak-to-peak size along x, y, z (nondimensional)."""
        tr = self.trajectory(n)
        return tr[:, :3].max(axis=0) - tr[:, :3].min(axis=0)

    def excursions(self, n: int = 800) -> np.ndarray:
        """Largest |x - x_L|, |y|, |z| reached, measured from the libration point."""
        tr = self.trajectory(n)
        xl = equilibrium_points(self.mu).x_of(self.point)
        return np.array([np.abs(tr[:, 0] - xl).max(), np.abs(tr[:, 1]).max(),
                         np.abs(tr[:, 2]).max()])

    def mirrored(self) -> "PeriodicOrbit":
        """Image under z -> -z (swaps the halo branches)."""
        m = np.array([1, 1, -1, 1, 1, -1.0])
        kind = {"halo-north": "halo-south", "halo-south": "halo-north"}.get(self.kind, self.kind)
        mono = None if self.monodromy is None else self.monodromy * np.outer(m, m)
        sv = None if self.stable_eigvec is None else self.stable_eigvec * m
        uv = None if self.unstable_eigvec is None else self.unstable_eigvec * m
        return replace(self, state=self.state * m, kind=kind, monodromy=mono, stable_eigvec=sv,
                       unstable_eigvec=uv)


def _collinear_coeff(n, gamma, point, mu):
    # Legendre coefficients of the potential expanded about L1/L2 in units of gamma
    if point == "L1":
        return (mu + (-1) ** n * (1 - mu) * gamma ** (n + 1) / (1 - gamma) ** (n + 1)) / gamma**3
    return ((-1) ** n * mu + (-1) ** n * (1 - mu) * gamma ** (n + 1) / (1 + gamma) ** (n + 1)) / gamma**3


def _gamma(point, mu):
    xl = equilibrium_points(mu).x_of(point)
    return abs(xl - (1 - mu)), xl


def _check_point(point):
    p = point.upper()
    if p not in ("L1", "L2"):
        raise ValueError(f"libration point must be L1 or L2, got {point!r}")
    return p


def linear_frequencies(point: str, mu: float = MU_SUN_EARTH):
    """(in-plane frequency, vertical frequency, k, c2) of the linearised flow."""
    point = _check_point(point)
    g, _ = _gamma(point, mu)
    c2 = _collinear_coeff(2, g, point, mu)
    lam = math.sqrt((2 - c2 + math.sqrt((c2 - 2) ** 2 + 4 * (c2 - 1) * (1 + 2 * c2))) / 2)
    k = (lam**2 + 1 + 2 * c2) / (2 * lam)
    return lam, math.sqrt(c2), k, c2


def lyapunov_seed(point: str, kind: str, amplitude: float, mu: float = MU_SUN_EARTH,
                  h: float = 1e-4):
    """Approximate Lyapunov orbit near a collinear point: (state, crossing time).

    ``amplitude`` is nondimensional: the x excursion for ``planar`` (linear
    centre solution) and the z excursion for ``vertical``. The vertical seed
    starts on the x axis and adds the forced second-order in-plane response
    to the linear vertical oscillation, without which a y = 0 crossing would
    be undefined. The crossing time is a half period (planar) or a quarter
    period (vertical).
    """
    point = _check_point(point)
    _, xl = _gamma(point, mu)
    lam, nu, k, c2 = linear_frequencies(point, mu)
    if kind == "planar":
        state = np.array([xl - amplitude, 0.0, 0.0, 0.0, k * amplitude * lam, 0.0])
        return state, math.pi / lam
    if kind != "vertical":
        raise ValueError("Lyapunov seeds are 'planar' or 'vertical'")

    def ax(z):
        return acceleration(np.array([xl, 0, z, 0, 0, 0.0]), mu)[3]

    uxzz = (ax(h) - 2 * ax(0.0) + ax(-h)) / h**2
    f0 = uxzz * amplitude**2 / 4
    x0 = -f0 / (1 + 2 * c2)
    # 2 nu harmonic of the in-plane response (forcing -f0 cos 2 nu t in x)
    m = np.array([[-4 * nu**2 - 1 - 2 * c2, -4 * nu], [-4 * nu, -4 * nu**2 + c2 - 1]])
    x2, y2 = np.linalg.solve(m, [-f0, 0.0])
    state = np.array([xl + x0 + x2, 0.0, 0.0, 0.0, 2 * nu * y2, amplitude * nu])
    return state, math.pi / (2 * nu)


def _richardson_coeffs(point, mu):
    g, xl = _gamma(point, mu)
    c2, c3, c4 = (_collinear_coeff(n, g, point, mu) for n in (2, 3, 4))
    lam = math.sqrt((2 - c2 + math.sqrt((c2 - 2) ** 2 + 4 * (c2 - 1) * (1 + 2 * c2))) / 2)
    k = (lam**2 + 1 + 2 * c2) / (2 * lam)
    d1 = 3 * lam**2 / k * (k * (6 * lam**2 - 1) - 2 * lam)
    d2 = 8 * lam**2 / k * (k * (11 * lam**2 - 1) - 2 * lam)
    a21 = 3 * c3 * (k**2 - 2) / (4 * (1 + 2 * c2))
    a22 = 3 * c3 / (4 * (1 + 2 * c2))
    a23 = -3 * c3 * lam / (4 * k * d1) * (3 * k**3 * lam - 6 * k * (k - lam) + 4)
    a24 = -3 * c3 * lam / (4 * k * d1) * (2 + 3 * k * lam)
    b21 = -3 * c3 * lam / (2 * d1) * (3 * k * lam - 4)
    b22 = 3 * c3 * lam / d1
    d21 = -c3 / (2 * lam**2)
    w = 9 * lam**2 + 1 - c2
    a31 = (-9 * lam / (4 * d2) * (4 * c3 * (k * a23 - b21) + k * c4 * (4 + k**2))
           + w / (2 * d2) * (3 * c3 * (2 * a23 - k * b21) + c4 * (2 + 3 * k**2)))
    a32 = -1 / d2 * (9 * lam / 4 * (4 * c3 * (k * a24 - b22) + k * c4)
                     + 1.5 * w * (c3 * (k * b22 + d21 - 2 * a24) - c4))
    w2 = 9 * lam**2 + 1 + 2 * c2
    b31 = 3 / (8 * d2) * (8 * lam * (3 * c3 * (k * b21 - 2 * a23) - c4 * (2 + 3 * k**2))
                          + w2 * (4 * c3 * (k * a23 - b21) + k * c4 * (4 + k**2)))
    b32 = 1 / d2 * (9 * lam * (c3 * (k * b22 + d21 - 2 * a24) - c4)
                    + 3 / 8 * w2 * (4 * c3 * (k * a24 - b22) + k * c4))
    d31 = 3 / (64 * lam**2) * (4 * c3 * a24 + c4)
    d32 = 3 / (64 * lam**2) * (4 * c3 * (a23 - d21) + c4 * (4 + k**2))
    den = 2 * lam * (lam * (1 + k**2) - 2 * k)
    s1 = (1.5 * c3 * (2 * a21 * (k**2 - 2) - a23 * (k**2 + 2) - 2 * k * b21)
          - 3 / 8 * c4 * (3 * k**4 - 8 * k**2 + 8)) / den
    s2 = (1.5 * c3 * (2 * a22 * (k**2 - 2) + a24 * (k**2 + 2) + 2 * k * b22 + 5 * d21)
          + 3 / 8 * c4 * (12 - k**2)) / den
    a1 = -1.5 * c3 * (2 * a21 + a23 + 5 * d21) - 3 / 8 * c4 * (12 - k**2)
    a2 = 1.5 * c3 * (a24 - 2 * a22) + 9 / 8 * c4
    return dict(g=g, xl=xl, c2=c2, lam=lam, k=k, a21=a21, a22=a22, a23=a23, a24=a24,
                b21=b21, b22=b22, d21=d21, a31=a31, a32=a32, b31=b31, b32=b32, d31=d31,
                d32=d32, s1=s1, s2=s2, l1=a1 + 2 * lam**2 * s1, l2=a2 + 2 * lam**2 * s2)


def _richardson_xyz(c, Ax, Az, dm, t1):
    """Third-order series (x, z, dy/dtau1) in gamma units at phase(s) t1."""
    x = (c["a21"] * Ax**2 + c["a22"] * Az**2 - Ax * np.cos(t1)
         + (c["a23"] * Ax**2 - c["a24"] * Az**2) * np.cos(2 * t1)
         + (c["a31"] * Ax**3 - c["a32"] * Ax * Az**2) * np.cos(3 * t1))
    z = dm * (Az * np.cos(t1) + c["d21"] * Ax * Az * (np.cos(2 * t1) - 3)
              + (c["d32"] * Az * Ax**2 - c["d31"] * Az**3) * np.cos(3 * t1))
    dy = (c["k"] * Ax * np.cos(t1) + 2 * (c["b21"] * Ax**2 - c["b22"] * Az**2) * np.cos(2 * t1)
          + 3 * (c["b31"] * Ax**3 - c["b32"] * Ax * Az**2) * np.cos(3 * t1))
    return x, z, dy


def halo_seed_richardson(point: str, z_amplitude: float, branch: str = "north",
                         mu: float = MU_SUN_EARTH, au_km: float = DEFAULT_CONSTANTS.au):
    """Third-order analytic halo: (state at a y = 0 crossing, half period).

    ``z_amplitude`` in km. The north branch has its largest z excursion
    positive, the south branch is its mirror image.
    """
    point = _check_point(point)
    if branch not in ("north", "south"):
        raise ValueError("branch must be 'north' or 'south'")
    if z_amplitude < 0:
        raise ValueError("z amplitude must be non-negative")
    c = _richardson_coeffs(point, mu)
    g = c["g"]
    Az = z_amplitude / au_km / g
    rad = (-(c["lam"] ** 2 - c["c2"]) - c["l2"] * Az**2) / c["l1"]
    if rad <= 0:
        raise ValueError(f"z amplitude {z_amplitude} km is below the halo bifurcation")
    Ax = math.sqrt(rad)
    omega = 1 + c["s1"] * Ax**2 + c["s2"] * Az**2
    phases = np.linspace(0, 2 * np.pi, 721)
    _, zs, _ = _richardson_xyz(c, Ax, Az, 1.0, phases)
    dm = 1.0 if zs[np.argmax(np.abs(zs))] > 0 else -1.0
    if branch == "south":
        dm = -dm
    x, z, dy = _richardson_xyz(c, Ax, Az, dm, 0.0)
    vy = dy * c["lam"] * omega
    state = np.array([c["xl"] + g * x, 0.0, g * z, 0.0, g * vy, 0.0])
    return state, math.pi / (c["lam"] * omega)


# --- correction -------------------------------------------------------------

def _cross_y0(y0, t_guess, mu, tol, with_stm):
    """Propagate to the first y = 0 crossing after a short lead-in.

    Returns (t, final vector incl. STM if requested).
    """
    n = 42 if with_stm else 6
    y = np.empty(n)
    y[:6] = y0
    if with_stm:
        y[6:] = np.eye(6).ravel()
    t_lead = _MIN_CROSS_T * t_guess
    ylead, status, _ = _dop853.integrate(y, 0.0, t_lead, mu, tol, tol, MAX_STEPS)
    _raise_for(status)
    # y = 0 on the side of the Sun the orbit is on
    c = 1.0 if ylead[0] + mu >= 0 else -1.0
    tc, yc, status = _dop853.integrate_to_section(ylead, t_lead, 4.0 * t_guess + 1.0, mu, tol,
                                                  tol, MAX_STEPS, c, 0.0, 1e-14)
    _raise_for(status, t=tc, state=yc[:6])
    return tc, yc


def _residual_jacobian(u, shape, t_guess, mu, tol):
    # y(t_c) = 0 by construction; residuals are the remaining velocity components
    free, res, _ = _LAYOUT[shape]
    s0 = np.zeros(6)
    s0[list(free)] = u
    tc, yc = _cross_y0(s0, t_guess, mu, tol, True)
    phi = yc[6:].reshape(6, 6)
    f = acceleration(yc[:6], mu)
    F = yc[list(res)]
    # variation at the crossing, eliminating dt through y = 0
    dt_dq = -phi[1, list(free)] / f[1]
    D = phi[np.ix_(res, free)] + np.outer(f[list(res)], dt_dq)
    return F, D, tc


def _jacobi_gradient(s, mu):
    a = acceleration(s, mu)
    vx, vy, vz = s[3:6]
    # grad U from the acceleration minus the Coriolis terms
    return np.array([2 * (a[3] - 2 * vy), 2 * (a[4] + 2 * vx), 2 * a[5], -2 * vx, -2 * vy,
                     -2 * vz])


def _make_orbit(u, tc, kind, point, mu):
    free, _, per = _LAYOUT[_shape(kind)]
    s0 = np.zeros(6)
    s0[list(free)] = u
    return PeriodicOrbit(s0, per * tc, float(jacobi_constant(s0, mu)), kind, point, mu)


def halo_branch(orbit: PeriodicOrbit) -> str:
    """'north' when the largest out-of-plane excursion is towards +z."""
    z = orbit.trajectory(400)[:, 2]
    return "north" if z[np.argmax(np.abs(z))] > 0 else "south"


def _guess_kind(state):
    s = np.asarray(state)
    if s[2] == 0.0 and s[5] == 0.0:
        return "planar"
    if s[2] == 0.0:
        return "vertical"
    return "halo-north"


def differential_correct(state, t_guess: float, kind: str | None = None, fixed: str | None = None,
                         point: str = "L2", mu: float = MU_SUN_EARTH, tol: float = DEFAULT_TOL,
                         max_iter: int = MAX_CORRECTOR_ITER,
                         residual_tol: float = CORRECTOR_TOL) -> PeriodicOrbit:
    """Single-shooting correction to a symmetric periodic orbit.

    ``t_guess`` is the time to the perpendicular crossing (half period for
    planar and halo orbits, quarter period for vertical ones). One free
    component (``'x'``, ``'z'``, ``'vy'`` or ``'vz'``; default x for planar,
    z for halo, vz for vertical) is held fixed and the others are updated by
    Newton steps with the state transition matrix until the crossing
    residuals drop below ``residual_tol``. Halo kinds are relabelled from the
    converged orbit's largest z excursion.
    """
    kind = kind or _guess_kind(state)
    shape = _shape(kind)
    fixed = fixed or {"planar": "x", "halo": "z", "vertical": "vz"}[shape]
    free, _, _ = _LAYOUT[shape]
    fixed_idx = [i for i, f in enumerate(free) if _FREE_NAMES[f] == fixed]
    if not fixed_idx:
        raise ValueError(f"cannot fix {fixed!r} for a {kind} orbit")
    keep = [i for i in range(len(free)) if i != fixed_idx[0]]
    u = np.asarray(state, dtype=float)[list(free)].copy()
    tg = t_guess
    for it in range(max_iter + 1):
        try:
            F, D, tc = _residual_jacobian(u, shape, tg, mu, tol)
        except PropagationError as exc:
            raise CorrectionError(f"propagation failed during correction: {exc}") from exc
        if np.max(np.abs(F)) < residual_tol:
            log.debug("corrected %s orbit in %d iterations", kind, it)
            orb = _make_orbit(u, tc, kind, point, mu)
            if shape == "halo":
                orb = replace(orb, kind=f"halo-{halo_branch(orb)}")
            return orb
        if it == max_iter:
            break
        Dk = D[:, keep]
        if np.linalg.cond(Dk) > 1e14:
            raise CorrectionError("singular correction matrix")
        u[keep] += np.linalg.solve(Dk, -F)
        tg = tc
    raise CorrectionError(f"{kind} correction did not converge in {max_iter} iterations")


def correction_iterations(state, t_guess, kind, **kw) -> int:
    """Number of Newton updates :func:`differential_correct` needs (for diagnostics)."""
    for n in range(MAX_CORRECTOR_ITER + 1):
        try:
            differential_correct(state, t_guess, kind, max_iter=n, **kw)
            return n
        except CorrectionError:
            continue
    raise CorrectionError("did not converge")


def _null_vector(D):
    _, _, vt = np.linalg.svd(D)
    return vt[-1]


def _correct_on_jacobi(u, kind, point, j_target, t_guess, mu, tol, max_iter=MAX_CORRECTOR_ITER):
    """Newton on the crossing residuals plus J(u) = j_target (square system)."""
    shape = _shape(kind)
    free = list(_LAYOUT[shape][0])
    for _ in range(max_iter):
        F, D, tc = _residual_jacobian(u, shape, t_guess, mu, tol)
        s0 = np.zeros(6)
        s0[free] = u
        G = np.append(F, float(jacobi_constant(s0, mu)) - j_target)
        if np.max(np.abs(G)) < CORRECTOR_TOL:
            return _make_orbit(u, tc, kind, point, mu)
        M = np.vstack([D, _jacobi_gradient(s0, mu)[free]])
        u = u + np.linalg.solve(M, -G)
        t_guess = tc
    raise CorrectionError(f"no {kind} member at J = {j_target:.10f}")


# --- stability ---------------------------------------------------------------

def monodromy(orbit: PeriodicOrbit, tol: float = DEFAULT_TOL) -> np.ndarray:
    return flow_with_stm(orbit.state, orbit.period, tol, orbit.mu)[1]


@dataclass(frozen=True)
class Stability:
    monodromy: np.ndarray
    eigenvalues: np.ndarray
    unstable_value: float
    stable_value: float
    unstable_vector: np.ndarray
    stable_vector: np.ndarray

    @property
    def stability_index(self) -> float:
        return 0.5 * (self.unstable_value + 1.0 / self.unstable_value)


def _positive_x(v):
    v = np.real(v)
    v = v / np.linalg.norm(v)
    return -v if v[0] < 0 else v


def stability(orbit: PeriodicOrbit, tol: float = DEFAULT_TOL) -> Stability:
    """Monodromy eigen-decomposition.

    Eigenvectors are unit norm with positive x component. Raises
    :class:`NotHyperbolicError` when no real multiplier exceeds 1.
    """
    M = monodromy(orbit, tol)
    w, V = np.linalg.eig(M)
    real = (np.abs(w.imag) < 1e-10 * np.maximum(1.0, np.abs(w))) & (w.real > 0)
    mag = np.where(real, np.abs(w), 0.0)
    iu = int(np.argmax(mag))
    if mag[iu] <= 1.0 + 1e-6:
        raise NotHyperbolicError(f"{orbit.point} {orbit.kind} orbit at J={orbit.jacobi:.10f} "
                                 "has no real multiplier > 1")
    lu = float(w[iu].real)
    # stable partner: the real multiplier closest to 1/lu
    cand = np.where(real, np.abs(w - 1.0 / lu), np.inf)
    is_ = int(np.argmin(cand))
    return Stability(M, w, lu, float(w[is_].real), _positive_x(V[:, iu]), _positive_x(V[:, is_]))


def with_stability(orbit: PeriodicOrbit, tol: float = DEFAULT_TOL) -> PeriodicOrbit:
    """Copy of ``orbit`` with monodromy and manifold eigen-data attached.

    Non-hyperbolic orbits keep ``eigenvalue = nan`` and no eigenvectors.
    """
    try:
        st = stability(orbit, tol)
    except NotHyperbolicError:
        log.warning("non-hyperbolic orbit %s %s J=%.10f", orbit.point, orbit.kind, orbit.jacobi)
        return replace(orbit, monodromy=monodromy(orbit, tol))
    return replace(orbit, monodromy=st.monodromy, eigenvalue=st.unstable_value,
                   stable_eigvec=st.stable_vector, unstable_eigvec=st.unstable_vector)


def vertical_index(orbit: PeriodicOrbit, tol: float = DEFAULT_TOL) -> float:
    """Hénon's vertical stability index of a planar orbit: half the trace of
    the (z, vz) block of the monodromy matrix. Critical at +1."""
    if orbit.kind != "planar":
        raise ValueError("vertical stability is defined for planar orbits")
    M = orbit.monodromy if orbit.monodromy is not None else monodromy(orbit, tol)
    return 0.5 * (M[2, 2] + M[5, 5])


@dataclass(frozen=True)
class HaloBifurcation:
    orbit: PeriodicOrbit
    x_amplitude: float
    vertical_index: float


# --- families ----------------------------------------------------------------

_CACHE_FIELDS = (["kind", "point", "mu", "x", "y", "z", "vx", "vy", "vz", "period", "jacobi",
                  "eigenvalue"] + [f"stable_{k}" for k in range(6)]
                 + [f"unstable_{k}" for k in range(6)])


@dataclass
class OrbitFamily:
    """Ordered family members (decreasing Jacobi constant)."""

    kind: str
    point: str
    members: list = field(default_factory=list)
    mu: float = MU_SUN_EARTH

    @property
    def jacobi(self) -> np.ndarray:
        return np.array([m.jacobi for m in self.members])

    @property
    def jacobi_range(self) -> tuple:
        j = self.jacobi
        return (float(j.min()), float(j.max())) if len(j) else (math.nan, math.nan)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i):
        return self.members[i]

    @property
    def label(self) -> str:
        """Short target label such as ``2Hs`` or ``1P``."""
        num = self.point[1]
        return {"planar": f"{num}P", "vertical": f"{num}V", "halo-north": f"{num}Hn",
                "halo-south": f"{num}Hs"}[self.kind]

    def nearest_index(self, jacobi: float) -> int:
        return int(np.argmin(np.abs(self.jacobi - jacobi)))

    def nearest(self, jacobi: float) -> PeriodicOrbit:
        return self.members[self.nearest_index(jacobi)]

    def subset(self, j_min: float = -np.inf, j_max: float = np.inf) -> "OrbitFamily":
        keep = [m for m in self.members if j_min <= m.jacobi <= j_max]
        return OrbitFamily(self.kind, self.point, keep, self.mu)

    def mirrored(self) -> "OrbitFamily":
        ms = [m.mirrored() for m in self.members]
        return OrbitFamily(ms[0].kind if ms else self.kind, self.point, ms, self.mu)

    def to_csv(self, path) -> None:
        """One row per member, floats at 17 significant digits (exact round trip)."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_CACHE_FIELDS)
            for m in self.members:
                sv = m.stable_eigvec if m.stable_eigvec is not None else np.full(6, np.nan)
                uv = m.unstable_eigvec if m.unstable_eigvec is not None else np.full(6, np.nan)
                nums = [m.mu, *m.state, m.period, m.jacobi, m.eigenvalue, *sv, *uv]
                w.writerow([m.kind, m.point] + [f"{v:.17g}" for v in nums])

    @classmethod
    def from_csv(cls, path) -> "OrbitFamily":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty family file")
        members = []
        for r in rows:
            st = np.array([float(r[k]) for k in ("x", "y", "z", "vx", "vy", "vz")])
            sv = np.array([float(r[f"stable_{k}"]) for k in range(6)])
            uv = np.array([float(r[f"unstable_{k}"]) for k in range(6)])
            hyper = np.all(np.isfinite(sv))
            members.append(PeriodicOrbit(st, float(r["period"]), float(r["jacobi"]), r["kind"],
                                         r["point"], float(r["mu"]), None, float(r["eigenvalue"]),
                                         sv if hyper else None, uv if hyper else None))
        return cls(members[0].kind, members[0].point, members, members[0].mu)


def continue_family(first: PeriodicOrbit, j_stop: float, j_max: float | None = None,
                    n_members: int = DEFAULT_MEMBERS, ds0: float = 1e-3, ds_min: float = 1e-8,
                    ds_max: float = 2e-3, max_steps: int = 20000, tol: float = DEFAULT_TOL,
                    attach_stability: bool = True) -> OrbitFamily:
    """Trace a family from ``first`` towards decreasing J down to ``j_stop``.

    Pseudo-arclength continuation in the free initial-state components; the
    step halves on corrector failure and grows by 1.5 after fast (<= 3
    iteration) convergence. Tracing ends below ``j_stop``, when J turns back
    or when the step underflows ``ds_min`` (family boundary). The traced
    branch is resampled with ``n_members`` orbits equally spaced in J over
    [j_stop, min(j_max, J(first))].
    """
    kind, point, mu = first.kind, first.point, first.mu
    shape = _shape(kind)
    free = list(_LAYOUT[shape][0])
    u = first.state[free].copy()
    tc = first.half_crossing_time
    _, D, _ = _residual_jacobian(u, shape, tc, mu, tol)
    tvec = _null_vector(D)
    if _jacobi_gradient(first.state, mu)[free] @ tvec > 0:
        tvec = -tvec
    raw_u, raw_t, raw_j = [u.copy()], [tc], [first.jacobi]
    ds = ds0
    for _ in range(max_steps):
        u_pred = u + ds * tvec
        uk, tk = u_pred.copy(), tc
        ok = False
        it = 0
        for it in range(8):
            try:
                F, Dk, tk = _residual_jacobian(uk, shape, tk, mu, tol)
            except PropagationError:
                break
            G = np.append(F, tvec @ (uk - u_pred))
            if np.max(np.abs(G)) < CORRECTOR_TOL:
                ok = True
                break
            try:
                uk = uk + np.linalg.solve(np.vstack([Dk, tvec]), -G)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(uk)):
                break
        if not ok:
            ds *= 0.5
            if ds < ds_min:
                log.info("%s %s continuation step underflow at J=%.10f", point, kind, raw_j[-1])
                break
            continue
        s0 = np.zeros(6)
        s0[free] = uk
        jk = float(jacobi_constant(s0, mu))
        if jk > raw_j[-1]:
            log.info("%s %s family turns in J at %.10f", point, kind, raw_j[-1])
            break
        t_new = _null_vector(Dk)
        if t_new @ tvec < 0:
            t_new = -t_new
        u, tc, tvec = uk, tk, t_new
        raw_u.append(u.copy())
        raw_t.append(tc)
        raw_j.append(jk)
        if jk < j_stop:
            break
        if it <= 3:
            ds = min(ds * 1.5, ds_max)
    raw_j = np.array(raw_j)
    hi = raw_j[0] if j_max is None else min(j_max, raw_j[0])
    lo = max(j_stop, raw_j[-1])
    if lo > hi:
        raise CorrectionError(f"{point} {kind} family does not reach J <= {hi:.10f}")
    members = []
    # raw_j is strictly decreasing
    for jt in np.linspace(hi, lo, n_members):
        k = int(np.clip(np.searchsorted(-raw_j, -jt), 1, len(raw_j) - 1))
        w = (jt - raw_j[k - 1]) / (raw_j[k] - raw_j[k - 1])
        ug = (1 - w) * raw_u[k - 1] + w * raw_u[k]
        tg = (1 - w) * raw_t[k - 1] + w * raw_t[k]
        try:
            orb = _correct_on_jacobi(ug, kind, point, jt, tg, mu, tol)
        except (CorrectionError, PropagationError, np.linalg.LinAlgError):
            kn = k if abs(raw_j[k] - jt) < abs(raw_j[k - 1] - jt) else k - 1
            orb = _correct_on_jacobi(raw_u[kn], kind, point, jt, raw_t[kn], mu, tol)
        members.append(with_stability(orb, tol) if attach_stability else orb)
    return OrbitFamily(kind, point, members, mu)


def orbit_at_jacobi(family: OrbitFamily, jacobi: float, tol: float = DEFAULT_TOL,
                    attach_stability: bool = True) -> PeriodicOrbit:
    """Family member corrected to exactly ``jacobi``; the guess interpolates
    the free initial-state components of the bracketing members."""
    js = family.jacobi
    lo, hi = float(js.min()), float(js.max())
    if not lo - 1e-12 <= jacobi <= hi + 1e-12:
        raise ValueError(f"J={jacobi} outside family range [{lo}, {hi}]")
    free, _, per = _LAYOUT[_shape(family.kind)]
    order = np.argsort(js)
    jj = js[order]
    k = int(np.clip(np.searchsorted(jj, jacobi), 1, len(jj) - 1))
    m0, m1 = family[order[k - 1]], family[order[k]]
    w = 0.0 if jj[k] == jj[k - 1] else (jacobi - jj[k - 1]) / (jj[k] - jj[k - 1])
    near = m0 if w < 0.5 else m1
    if abs(near.jacobi - jacobi) < 1e-14:
        return near if near.monodromy is not None or not attach_stability else with_stability(near, tol)
    u = (1 - w) * m0.state[list(free)] + w * m1.state[list(free)]
    t_guess = ((1 - w) * m0.period + w * m1.period) / per
    try:
        orb = _correct_on_jacobi(u, family.kind, family.point, jacobi, t_guess, family.mu, tol)
    except CorrectionError:
        # close to a bifurcation the blended guess can fall off the branch
        orb = _correct_on_jacobi(near.state[list(free)], family.kind, family.point, jacobi,
                                 near.period / per, family.mu, tol)
    return with_stability(orb, tol) if attach_stability else orb


def find_halo_bifurcation(planar_family: OrbitFamily, tol: float = DEFAULT_TOL,
                          index_tol: float = 1e-10) -> HaloBifurcation:
    """Planar member where the vertical index crosses +1, refined by bisection
    (regula falsi) in J between the bracketing members."""
    if planar_family.kind != "planar":
        raise ValueError("halo bifurcation is searched along a planar family")
    fam = planar_family
    idx = np.array([vertical_index(m, tol) for m in fam.members]) - 1.0
    hits = np.nonzero(np.sign(idx[:-1]) != np.sign(idx[1:]))[0]
    if len(hits) == 0:
        raise CorrectionError("vertical index does not cross +1 within the family range")
    k = int(hits[0])
    free = list(_LAYOUT["planar"][0])
    a, b = fam[k], fam[k + 1]
    ja, jb, fa, fb = a.jacobi, b.jacobi, idx[k], idx[k + 1]
    ua, ub = a.state[free], b.state[free]
    ta, tb = a.half_crossing_time, b.half_crossing_time
    best, fbest = (a, fa) if abs(fa) < abs(fb) else (b, fb)
    side = 0
    for _ in range(80):
        w = fa / (fa - fb)
        jt = ja + w * (jb - ja)
        orb = _correct_on_jacobi((1 - w) * ua + w * ub, "planar", fam.point, jt,
                                 (1 - w) * ta + w * tb, fam.mu, tol)
        ft = vertical_index(orb, tol) - 1.0
        if abs(ft) < abs(fbest):
            best, fbest = orb, ft
        if abs(ft) < index_tol or abs(jb - ja) < 1e-15:
            break
        # Illinois modification keeps the bracket shrinking from both sides
        if np.sign(ft) == np.sign(fa):
            ja, fa, ua, ta = jt, ft, orb.state[free], orb.half_crossing_time
            if side == 1:
                fb *= 0.5
            side = 1
        else:
            jb, fb, ub, tb = jt, ft, orb.state[free], orb.half_crossing_time
            if side == -1:
                fa *= 0.5
            side = -1
    best = with_stability(best, tol)
    xl = equilibrium_points(fam.mu).x_of(fam.point)
    return HaloBifurcation(best, float(abs(best.state[0] - xl)), fbest + 1.0)


def halo_seed_from_bifurcation(bif: HaloBifurcation, branch: str = "north", dz: float = 1e-5,
                               tol: float = DEFAULT_TOL) -> PeriodicOrbit:
    """First halo member: displace the bifurcating planar orbit out of plane
    by ``dz`` and correct with z fixed; flips the sign of the displacement if
    the converged orbit lands on the other branch."""
    orb0 = bif.orbit
    for sign in (1.0, -1.0):
        s = orb0.state.copy()
        s[2] = sign * dz
        orb = differential_correct(s, orb0.half_crossing_time, "halo-north", fixed="z",
                                   point=orb0.point, mu=orb0.mu, tol=tol)
        if orb.kind == f"halo-{branch}":
            return orb
    raise CorrectionError(f"could not seed a {branch} halo")


def build_family(point: str, kind: str, j_stop: float, j_max: float | None = None,
                 n_members: int = DEFAULT_MEMBERS, mu: float = MU_SUN_EARTH,
                 tol: float = DEFAULT_TOL, seed_amplitude: float = 1e-4,
                 halo_dz: float = 1e-5) -> OrbitFamily:
    """Seed, correct and continue one family down to ``j_stop``.

    South halos are the exact z-mirror of the north family.
    """
    point = _check_point(point)
    if kind == "planar":
        st, th = lyapunov_seed(point, "planar", seed_amplitude, mu)
        first = differential_correct(st, th, "planar", fixed="x", point=point, mu=mu, tol=tol)
    elif kind == "vertical":
        st, tq = lyapunov_seed(point, "vertical", 10 * seed_amplitude, mu)
        first = differential_correct(st, tq, "vertical", fixed="vz", point=point, mu=mu, tol=tol)
    elif kind in ("halo-north", "halo-south"):
        planar = build_family(point, "planar", j_stop=_halo_search_floor(point, mu), mu=mu,
                              tol=tol, n_members=40, seed_amplitude=seed_amplitude)
        bif = find_halo_bifurcation(planar, tol)
        first = halo_seed_from_bifurcation(bif, "north", dz=halo_dz, tol=tol)
        fam = continue_family(first, j_stop, j_max, n_members=n_members, tol=tol)
        return fam if kind == "halo-north" else fam.mirrored()
    else:
        raise ValueError(f"unknown orbit kind {kind!r}")
    return continue_family(first, j_stop, j_max, n_members=n_members, tol=tol)


def _halo_search_floor(point, mu):
    # planar members between J(L) and this level bracket the halo bifurcation
    return equilibrium_points(mu).jacobi[point] - 1.2e-4
