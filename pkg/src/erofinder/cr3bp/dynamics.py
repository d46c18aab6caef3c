"""Sun-Earth CR3BP: states, equilibria, Jacobi integral and propagation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from erofinder.constants import MU_SUN_EARTH
from erofinder.cr3bp import _dop853

DEFAULT_TOL = 1e-12
MAX_STEPS = 2_000_000


class PropagationError(RuntimeError):
    """Integration failed (step underflow, step budget, primary proximity)."""

    def __init__(self, message, status=None, t=None, state=None):
        super().__init__(message)
        self.status = status
        self.t = t
        self.state = state


class SingularityError(PropagationError):
    """Trajectory came within the primary-proximity guard distance."""


class NoCrossingError(PropagationError):
    """No section crossing before the time bound."""


_STATUS_TEXT = {
    _dop853.MAX_STEPS: "step budget exhausted",
    _dop853.STEP_UNDERFLOW: "step size underflow",
    _dop853.SINGULARITY: "passed within 1e-6 of a primary",
    _dop853.NO_CROSSING: "no section crossing",
}


def _raise_for(status, t=None, state=None):
    if status == _dop853.OK:
        return
    msg = _STATUS_TEXT.get(status, f"integrator status {status}")
    cls = {
        _dop853.SINGULARITY: SingularityError,
        _dop853.NO_CROSSING: NoCrossingError,
    }.get(status, PropagationError)
    raise cls(msg, status=status, t=t, state=state)


@dataclass(frozen=True)
class RotatingState:
    """Nondimensional barycentric rotating-frame state at epoch ``t``."""

    x: float
    y: float
    z: float
    vx: float
    vy: float
    vz: float
    t: float = 0.0

    @classmethod
    def from_array(cls, arr, t=0.0) -> "RotatingState":
        a = np.asarray(arr, dtype=float)
        return cls(*map(float, a[:6]), t=float(t))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.vx, self.vy, self.vz])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vz])


def as_array(s) -> np.ndarray:
    if isinstance(s, RotatingState):
        return s.array
    a = np.asarray(s, dtype=float)
    if a.shape[-1] != 6:
        raise ValueError(f"expected a 6-vector state, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class EquilibriumSet:
    mu: float
    x_l1: float
    x_l2: float
    x_l3: float
    l4: tuple
    l5: tuple
    jacobi: dict

    def x_of(self, point: str) -> float:
        return {"L1": self.x_l1, "L2": self.x_l2, "L3": self.x_l3}[point.upper()]

    def state(self, point: str) -> np.ndarray:
        p = point.upper()
        if p in ("L4", "L5"):
            xy = self.l4 if p == "L4" else self.l5
            return np.array([xy[0], xy[1], 0.0, 0.0, 0.0, 0.0])
        return np.array([self.x_of(p), 0.0, 0.0, 0.0, 0.0, 0.0])


def collinear_force(x, mu):
    """x-component of the rotating-frame acceleration on the x axis at rest."""
    return x - (1 - mu) * (x + mu) / abs(x + mu) ** 3 - mu * (x - 1 + mu) / abs(x - 1 + mu) ** 3


def _collinear_gamma(point, mu):
    # quintics for the distance gamma to the nearest primary (L1, L2: Earth; L3: Sun)
    if point == 1:
        coeffs = [1, -(3 - mu), 3 - 2 * mu, -mu, 2 * mu, -mu]
        guess = (mu / 3) ** (1 / 3)
    elif point == 2:
        coeffs = [1, 3 - mu, 3 - 2 * mu, -mu, -2 * mu, -mu]
        guess = (mu / 3) ** (1 / 3)
    else:
        coeffs = [1, 2 + mu, 1 + 2 * mu, -(1 - mu), -2 * (1 - mu), -(1 - mu)]
        guess = 1 - 7 * mu / 12
    p = np.poly1d(coeffs)
    dp = p.deriv()
    g = guess
    for _ in range(100):
        step = p(g) / dp(g)
        g -= step
        if abs(step) < 1e-16 * max(1.0, abs(g)):
            break
    else:
        raise RuntimeError(f"collinear point L{point} did not converge for mu={mu}")
    return g


def equilibrium_points(mu: float = MU_SUN_EARTH) -> EquilibriumSet:
    """Five libration points and their Jacobi constants."""
    if not 0.0 < mu < 0.5:
        raise ValueError(f"mu must lie in (0, 0.5), got {mu}")
    xs = []
    for k, sign_x in ((1, -1), (2, 1), (3, None)):
        g = _collinear_gamma(k, mu)
        x = (1 - mu) + sign_x * g if k != 3 else -mu - g
        # Newton polish on the force itself
        for _ in range(5):
            fx = collinear_force(x, mu)
            dfx = 1 + 2 * (1 - mu) / abs(x + mu) ** 3 + 2 * mu / abs(x - 1 + mu) ** 3
            dx = fx / dfx
            x -= dx
            if abs(dx) < 1e-17:
                break
        if not np.isfinite(x):
            raise RuntimeError(f"collinear point L{k} did not converge for mu={mu}")
        xs.append(x)
    l4 = (0.5 - mu, np.sqrt(3.0) / 2.0)
    l5 = (0.5 - mu, -np.sqrt(3.0) / 2.0)
    jac = {}
    for name, pos in (("L1", (xs[0], 0.0)), ("L2", (xs[1], 0.0)), ("L3", (xs[2], 0.0)),
                      ("L4", l4), ("L5", l5)):
        jac[name] = jacobi_constant(np.array([pos[0], pos[1], 0, 0, 0, 0.0]), mu)
    return EquilibriumSet(mu, xs[0], xs[1], xs[2], l4, l5, jac)


def pseudo_potential(pos, mu=MU_SUN_EARTH):
    pos = np.asarray(pos, dtype=float)
    x, y, z = pos[..., 0], pos[..., 1], pos[..., 2]
    r1 = np.sqrt((x + mu) ** 2 + y**2 + z**2)
    r2 = np.sqrt((x - 1 + mu) ** 2 + y**2 + z**2)
    return 0.5 * (x**2 + y**2) + (1 - mu) / r1 + mu / r2


def jacobi_constant(s, mu: float = MU_SUN_EARTH):
    """J = 2U - v^2. Works on a single state or a stack of states."""
    a = as_array(s)
    v2 = np.sum(a[..., 3:6] ** 2, axis=-1)
    return 2.0 * pseudo_potential(a[..., :3], mu) - v2


def acceleration(s, mu: float = MU_SUN_EARTH) -> np.ndarray:
    """Time derivative of a 6-state."""
    out = np.empty(6)
    _dop853.rhs(np.ascontiguousarray(as_array(s), dtype=float), mu, out)
    return out


def _check_tol(tol):
    if not 1e-14 <= tol <= 1e-6:
        raise ValueError(f"tolerance must lie in [1e-14, 1e-6], got {tol}")


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def propagate(s0, dt: float, tol: float = DEFAULT_TOL, n_samples: int = 2, t_eval=None,
              mu: float = MU_SUN_EARTH, atol: float | None = None) -> Trajectory:
    """Propagate a rotating-frame state by ``dt`` (may be negative).

    Samples ``n_samples`` equally spaced times including both ends unless
    ``t_eval`` (offsets from the start, monotone towards ``dt``) is given.
    """
    _check_tol(tol)
    y0 = np.ascontiguousarray(as_array(s0), dtype=float)
    if t_eval is None:
        t_eval = np.linspace(0.0, dt, max(int(n_samples), 2))
    t_eval = np.ascontiguousarray(t_eval, dtype=float)
    if dt == 0.0 and np.all(t_eval == 0.0):
        return Trajectory(t_eval, np.tile(y0, (len(t_eval), 1)))
    out, status = _dop853.integrate_eval(y0, 0.0, t_eval, mu, tol, tol if atol is None else atol,
                                         MAX_STEPS)
    _raise_for(status)
    return Trajectory(t_eval, out)


def flow(s0, dt: float, tol: float = DEFAULT_TOL, mu: float = MU_SUN_EARTH) -> np.ndarray:
    """Final state only; cheaper than :func:`propagate`."""
    _check_tol(tol)
    y0 = np.ascontiguousarray(as_array(s0), dtype=float)
    y, status, _ = _dop853.integrate(y0, 0.0, float(dt), mu, tol, tol, MAX_STEPS)
    _raise_for(status, state=y)
    return y


def flow_with_stm(s0, dt: float, tol: float = DEFAULT_TOL, mu: float = MU_SUN_EARTH):
    """Final state and 6x6 state transition matrix."""
    _check_tol(tol)
    y0 = np.concatenate([as_array(s0), np.eye(6).ravel()])
    y, status, _ = _dop853.integrate(y0, 0.0, float(dt), mu, tol, tol, MAX_STEPS)
    _raise_for(status, state=y[:6])
    return y[:6].copy(), y[6:].reshape(6, 6).copy()


def state_transition(s0, dt: float, tol: float = DEFAULT_TOL, mu: float = MU_SUN_EARTH):
    """State transition matrix of the flow over ``dt``."""
    return flow_with_stm(s0, dt, tol, mu)[1]


def propagate_to_section(s0, angle: float, direction: int = 1, t_max: float = 20.0,
                         tol: float = DEFAULT_TOL, mu: float = MU_SUN_EARTH,
                         g_tol: float = 1e-13):
    """Propagate until crossing the half plane through the Sun at ``angle``.

    The half plane contains the rotating z axis through the Sun and makes
    ``angle`` with the Sun-Earth line. ``direction`` is the time direction.
    Returns ``(state, elapsed)`` with ``elapsed`` signed.
    """
    _check_tol(tol)
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    y0 = np.ascontiguousarray(as_array(s0), dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    g0 = _dop853.section_value(y0, mu, c, s)
    if abs(g0) < g_tol and c * (y0[0] + mu) + s * y0[1] > 0:
        return y0.copy(), 0.0
    tc, yc, status = _dop853.integrate_to_section(y0, 0.0, direction * float(t_max), mu, tol,
                                                  tol, MAX_STEPS, c, s, g_tol)
    _raise_for(status, t=tc, state=yc)
    return yc.copy(), float(tc)


def section_value(s, angle: float, mu: float = MU_SUN_EARTH) -> float:
    return float(_dop853.section_value(as_array(s), mu, np.cos(angle), np.sin(angle)))
