"""Stable-manifold globalization to the Sun-centred +-pi/8 section.

Trajectories leave a family member along its stable eigenvector (transported
by the state transition matrix to the requested phase), are propagated
backwards to the section and catalogued by their heliocentric osculating
elements there.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from erofinder.constants import DEFAULT, MJD_J2000, Constants
from erofinder.cr3bp import _dop853
from erofinder.cr3bp.dynamics import (
    DEFAULT_TOL,
    MAX_STEPS,
    PropagationError,
    SingularityError,
    equilibrium_points,
    flow,
    jacobi_constant,
    propagate,
    pseudo_potential,
)
from erofinder.cr3bp.frames import rotating_to_heliocentric
from erofinder.kepler import state_to_elements
from erofinder.lpo import OrbitFamily, PeriodicOrbit, with_stability

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EPSILON = 1e-6
N_PHASES = 100
# backward horizon: crossings take 8-32 time units over the family J ranges, plus 8
T_MAX = 40.0
SECTION_ANGLE = {"L1": -math.pi / 8, "L2": math.pi / 8}
# exterior branch for L2, interior for L1 (relative to the positive-x eigenvector)
DEFAULT_BRANCH = {"L1": -1, "L2": 1}
ENVELOPE_MIN_SAMPLES = 50
FIT_DEGREE = 4


class ManifoldError(RuntimeError):
    pass


@dataclass(frozen=True)
class ManifoldTrajectory:
    """One globalized stable-manifold trajectory.

    ``elements_at_section`` = (a [AU], e, i, raan, argp, nu) [rad] for an
    insertion into the periodic orbit at ``t_ref`` (MJD); the section is
    reached ``transfer_time`` (nondimensional) before insertion.
    """

    family: str
    point: str
    member: int
    jacobi: float
    phase: float
    branch: int
    initial_state: np.ndarray
    section_state: np.ndarray
    transfer_time: float
    elements_at_section: np.ndarray
    t_ref: float = MJD_J2000

    def section_epoch(self, t_ins: float | None = None, const: Constants = DEFAULT) -> float:
        t_ins = self.t_ref if t_ins is None else t_ins
        return t_ins - const.nd_to_days(self.transfer_time)


def _phase_states(orbit: PeriodicOrbit, phases, tol):
    """States and STMs at the given phase fractions of one period."""
    t_eval = np.ascontiguousarray(np.asarray(phases, dtype=float) * orbit.period)
    y0 = np.concatenate([orbit.state, np.eye(6).ravel()])
    out, status = _dop853.integrate_eval(y0, 0.0, t_eval, orbit.mu, tol, tol, MAX_STEPS)
    if status != _dop853.OK:
        raise PropagationError("orbit propagation failed", status=status)
    return out[:, :6], out[:, 6:].reshape(-1, 6, 6)


def stable_direction(orbit: PeriodicOrbit, phases, tol: float = DEFAULT_TOL):
    """Orbit states and unit stable directions at ``phases`` (fractions of a period)."""
    if orbit.stable_eigvec is None:
        orbit = with_stability(orbit, tol)
        if orbit.stable_eigvec is None:
            raise ManifoldError(f"orbit at J={orbit.jacobi:.10f} is not hyperbolic")
    phases = np.atleast_1d(np.asarray(phases, dtype=float))
    order = np.argsort(phases)
    states = np.empty((len(phases), 6))
    dirs = np.empty((len(phases), 6))
    xs, phis = _phase_states(orbit, phases[order], tol)
    for j, k in enumerate(order):
        v = phis[j] @ orbit.stable_eigvec
        states[k] = xs[j]
        dirs[k] = v / np.linalg.norm(v)
    if orbit.kind == "planar":
        # the plane is invariant; drop round-off that would grow out of it
        dirs[:, [2, 5]] = 0.0
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    return states, dirs


def manifold_initial_conditions(orbit: PeriodicOrbit, n_points: int = N_PHASES,
                                epsilon: float = EPSILON, branch: int | None = None,
                                tol: float = DEFAULT_TOL):
    """Perturbed states on the stable manifold: (phases, states).

    Phases are uniform in [0, 1); at each, the stable eigenvector carried by
    the state transition matrix and renormalised to unit length scales the
    ``epsilon`` displacement. ``branch`` is the displacement sign (+1 along
    the positive-x eigenvector); default exterior for L2, interior for L1.
    """
    if n_points < 1:
        raise ValueError("n_points must be at least 1")
    branch = DEFAULT_BRANCH[orbit.point] if branch is None else int(branch)
    phases = np.arange(n_points) / n_points
    states, dirs = stable_direction(orbit, phases, tol)
    return phases, states + branch * epsilon * dirs


def section_elements(section_state, epoch_mjd, const: Constants = DEFAULT) -> np.ndarray:
    """Heliocentric two-body elements (a [AU], e, i, raan, argp, nu) of rotating state(s)."""
    h = rotating_to_heliocentric(section_state, epoch_mjd, const)
    flat = np.atleast_2d(h)
    out = np.empty((len(flat), 6))
    for k, rv in enumerate(flat):
        out[k] = state_to_elements(np.ascontiguousarray(rv), const.mu_sun)
    out[:, 0] /= const.au
    return out.reshape(np.shape(h))


def globalize_to_section(ic, point: str, t_max: float = T_MAX, tol: float = DEFAULT_TOL,
                         mu: float | None = None):
    """Backward propagation of a perturbed state to the point's section.

    Returns ``(section_state, transfer_time)`` with a positive transfer time,
    or ``None`` when no crossing occurs within ``t_max`` or the trajectory
    falls into a primary (interior branch; flagged by the caller).
    """
    mu = DEFAULT.mu if mu is None else mu
    ang = SECTION_ANGLE[point]
    y0 = np.ascontiguousarray(ic, dtype=float)
    tc, yc, status = _dop853.integrate_to_section(y0, 0.0, -float(t_max), mu, tol, tol, MAX_STEPS,
                                                  math.cos(ang), math.sin(ang), 1e-13)
    if status != _dop853.OK:
        return None
    return yc, -tc


@dataclass
class ManifoldSet:
    """Globalized manifold of a whole family, stored column-wise."""

    family: str
    point: str
    member: np.ndarray
    jacobi: np.ndarray
    phase: np.ndarray
    branch: np.ndarray
    initial_state: np.ndarray
    section_state: np.ndarray
    transfer_time: np.ndarray
    elements: np.ndarray
    reached: np.ndarray
    t_ref: float = MJD_J2000
    epsilon: float = EPSILON
    family_hash: str = ""

    def __len__(self):
        return len(self.member)

    def trajectory(self, k: int) -> ManifoldTrajectory:
        return ManifoldTrajectory(self.family, self.point, int(self.member[k]),
                                  float(self.jacobi[k]), float(self.phase[k]),
                                  int(self.branch[k]), self.initial_state[k].copy(),
                                  self.section_state[k].copy(), float(self.transfer_time[k]),
                                  self.elements[k].copy(), self.t_ref)

    def trajectories(self, member: int | None = None, reached_only: bool = True) -> list:
        sel = np.ones(len(self), bool) if member is None else self.member == member
        if reached_only:
            sel &= self.reached
        return [self.trajectory(k) for k in np.nonzero(sel)[0]]

    def select(self, mask) -> "ManifoldSet":
        m = np.asarray(mask)
        return ManifoldSet(self.family, self.point, self.member[m], self.jacobi[m], self.phase[m],
                           self.branch[m], self.initial_state[m], self.section_state[m],
                           self.transfer_time[m], self.elements[m], self.reached[m], self.t_ref,
                           self.epsilon, self.family_hash)

    def member_ids(self) -> np.ndarray:
        return np.unique(self.member)

    # persistence ------------------------------------------------------------
    def save(self, path) -> None:
        meta = dict(schema=SCHEMA_VERSION, family=self.family, point=self.point,
                    t_ref=self.t_ref, epsilon=self.epsilon, family_hash=self.family_hash)
        with Path(path).open("wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), member=self.member,
                     jacobi=self.jacobi, phase=self.phase, branch=self.branch,
                     initial_state=self.initial_state, section_state=self.section_state,
                     transfer_time=self.transfer_time, elements=self.elements,
                     reached=self.reached)

    @classmethod
    def load(cls, path) -> "ManifoldSet":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("schema") != SCHEMA_VERSION:
                raise ManifoldError(f"{path}: manifold cache schema {meta.get('schema')} != "
                                    f"{SCHEMA_VERSION}")
            return cls(meta["family"], meta["point"], z["member"], z["jacobi"], z["phase"],
                       z["branch"], z["initial_state"], z["section_state"], z["transfer_time"],
                       z["elements"], z["reached"], meta["t_ref"], meta["epsilon"],
                       meta["family_hash"])


def globalize_family(family: OrbitFamily, n_points: int = N_PHASES, epsilon: float = EPSILON,
                     members=None, branch: int | None = None, t_max: float = T_MAX,
                     t_ref: float = MJD_J2000, tol: float = DEFAULT_TOL,
                     const: Constants = DEFAULT, family_hash: str = "") -> ManifoldSet:
    """Globalize ``n_points`` phases of each selected member (default: all)."""
    idx = range(len(family)) if members is None else members
    rows = []
    for k in idx:
        orb = family[k]
        br = DEFAULT_BRANCH[orb.point] if branch is None else branch
        phases, ics = manifold_initial_conditions(orb, n_points, epsilon, br, tol)
        for ph, ic in zip(phases, ics):
            res = globalize_to_section(ic, orb.point, t_max, tol, orb.mu)
            if res is None:
                rows.append((k, orb.jacobi, ph, br, ic, np.full(6, np.nan), np.nan, False))
            else:
                rows.append((k, orb.jacobi, ph, br, ic, res[0], res[1], True))
    n = len(rows)
    member = np.array([r[0] for r in rows], dtype=np.int64).reshape(n)
    jac = np.array([r[1] for r in rows], dtype=float).reshape(n)
    phase = np.array([r[2] for r in rows], dtype=float).reshape(n)
    br_arr = np.array([r[3] for r in rows], dtype=np.int64).reshape(n)
    ics = np.array([r[4] for r in rows], dtype=float).reshape(n, 6)
    sec = np.array([r[5] for r in rows], dtype=float).reshape(n, 6)
    ttr = np.array([r[6] for r in rows], dtype=float).reshape(n)
    reached = np.array([r[7] for r in rows], dtype=bool).reshape(n)
    elements = np.full((n, 6), np.nan)
    if reached.any():
        epochs = t_ref - const.nd_to_days(ttr[reached])
        elements[reached] = section_elements(sec[reached], epochs, const)
    lost = int((~reached).sum())
    if lost:
        log.info("%s %s: %d of %d trajectories did not reach the section", family.point,
                 family.kind, lost, n)
    return ManifoldSet(family.label, family.point, member, jac, phase, br_arr, ics, sec, ttr,
                       elements, reached, t_ref, epsilon, family_hash)


def section_phase_projection(trajectories, const: Constants = DEFAULT) -> np.ndarray:
    """(r [AU], r-dot [km/s]) of section states, r measured from the Sun."""
    if isinstance(trajectories, ManifoldSet):
        states = trajectories.section_state[trajectories.reached]
    else:
        states = np.array([t.section_state for t in trajectories]).reshape(-1, 6)
    rel = states[:, :3].copy()
    rel[:, 0] += const.mu
    r = np.linalg.norm(rel, axis=1)
    # the frame rotation adds no radial velocity component
    rdot = np.einsum("ij,ij->i", rel, states[:, 3:]) / r
    return np.column_stack([r, rdot * const.velocity_unit])


def _rotate_z(vecs, ang):
    c, s = np.cos(ang), np.sin(ang)
    out = np.array(vecs, dtype=float, copy=True)
    out[..., 0] = c * vecs[..., 0] - s * vecs[..., 1]
    out[..., 1] = s * vecs[..., 0] + c * vecs[..., 1]
    out[..., 3] = c * vecs[..., 3] - s * vecs[..., 4]
    out[..., 4] = s * vecs[..., 3] + c * vecs[..., 4]
    return out


def manifold_elements_at_epoch(traj: ManifoldTrajectory, t_ins: float,
                               const: Constants = DEFAULT, planar_tol: float = 1e-9) -> np.ndarray:
    """Section elements for an insertion at ``t_ins`` (MJD).

    Only the longitude of perihelion moves, by 2 pi (t_ins - t_ref) / T_earth:
    it is applied to the node for inclined trajectories and to the argument
    of perihelion (node fixed at 0) for planar ones.
    """
    el = np.array(traj.elements_at_section, dtype=float)
    shift = 2 * math.pi * (t_ins - traj.t_ref) * 86400.0 / const.t_earth
    if el[2] > planar_tol:
        el[3] = (el[3] + shift) % (2 * math.pi)
    else:
        el[4] = (el[4] + shift) % (2 * math.pi)
    return el


def section_heliocentric_state(section_state, section_epoch, const: Constants = DEFAULT):
    """Heliocentric [km, km/s] state of a section state at its own epoch."""
    return rotating_to_heliocentric(section_state, section_epoch, const)


@dataclass
class ElementEnvelope:
    """Per-member extremes of perihelion, aphelion (AU) and inclination (deg)."""

    family: str
    point: str
    jacobi: np.ndarray
    rp_min: np.ndarray
    rp_max: np.ndarray
    ra_min: np.ndarray
    ra_max: np.ndarray
    i_min: np.ndarray
    i_max: np.ndarray
    fits: dict | None = None

    _QUANTITIES = ("rp_min", "rp_max", "ra_min", "ra_max", "i_min", "i_max")

    def evaluate(self, jacobi: float):
        """Band at ``jacobi``: (values dict, clamped flag).

        Uses the polynomial fits when present, linear interpolation otherwise;
        J outside the envelope clamps to its boundary.
        """
        lo, hi = float(self.jacobi.min()), float(self.jacobi.max())
        clamped = not (lo <= jacobi <= hi)
        jc = min(max(jacobi, lo), hi)
        vals = {}
        order = np.argsort(self.jacobi)
        for q in self._QUANTITIES:
            if self.fits:
                vals[q] = float(np.polyval(self.fits[q], _fit_var(jc)))
            else:
                vals[q] = float(np.interp(jc, self.jacobi[order], getattr(self, q)[order]))
        return vals, clamped

    def fit_residuals(self) -> dict:
        if not self.fits:
            return {}
        x = _fit_var(self.jacobi)
        return {q: float(np.max(np.abs(np.polyval(self.fits[q], x) - getattr(self, q))))
                for q in self._QUANTITIES}

    def to_rows(self):
        for k in range(len(self.jacobi)):
            yield [self.jacobi[k]] + [getattr(self, q)[k] for q in self._QUANTITIES]


def _fit_var(j):
    # well-conditioned abscissa for the polynomial fits
    return (np.asarray(j) - 3.0) * 1e4


def element_envelope(mset: ManifoldSet, fit: bool | None = None,
                     min_samples: int = ENVELOPE_MIN_SAMPLES) -> ElementEnvelope:
    """Per-J extremes of r_p, r_a, i over each member's section states.

    Vertical families additionally carry degree-4 polynomial fits vs J.
    """
    js, cols = [], {q: [] for q in ElementEnvelope._QUANTITIES}
    for k in mset.member_ids():
        sel = (mset.member == k) & mset.reached
        if sel.sum() < min_samples:
            raise ManifoldError(f"member {k}: {int(sel.sum())} section states, need {min_samples}")
        el = mset.elements[sel]
        rp = el[:, 0] * (1 - el[:, 1])
        ra = el[:, 0] * (1 + el[:, 1])
        inc = np.degrees(el[:, 2])
        js.append(float(mset.jacobi[sel][0]))
        for q, v in (("rp_min", rp.min()), ("rp_max", rp.max()), ("ra_min", ra.min()),
                     ("ra_max", ra.max()), ("i_min", inc.min()), ("i_max", inc.max())):
            cols[q].append(float(v))
    env = ElementEnvelope(mset.family, mset.point, np.array(js),
                          *[np.array(cols[q]) for q in ElementEnvelope._QUANTITIES])
    if fit is None:
        fit = mset.family.endswith("V")
    if fit:
        x = _fit_var(env.jacobi)
        env.fits = {q: np.polyfit(x, getattr(env, q), FIT_DEGREE)
                    for q in ElementEnvelope._QUANTITIES}
    return env


# --- separatrix check ----------------------------------------------------------

def transits(state, point: str, t_max: float, mu: float | None = None, tol: float = 1e-10) -> bool:
    """True if forward flow passes the libration-point bottleneck into the
    Earth region (x beyond x_L towards Earth with |y| inside the neck)."""
    mu = DEFAULT.mu if mu is None else mu
    eq = equilibrium_points(mu)
    xl = eq.x_of(point)
    gamma = abs(xl - (1 - mu))
    try:
        tr = propagate(state, t_max, tol=tol, n_samples=400, mu=mu).states
    except SingularityError:
        # only Earth is reachable from the section at these energies
        return True
    inside = (tr[:, 0] < xl - 0.3 * gamma) if point == "L2" else (tr[:, 0] > xl + 0.3 * gamma)
    neck = np.abs(tr[:, 1]) < 2 * gamma
    return bool(np.any(inside & neck))


def displace_in_loop(section_state, centroid, fraction: float, const: Constants = DEFAULT,
                     mu: float | None = None) -> np.ndarray:
    """Move a section state towards (fraction > 0) or away from (< 0) a point of
    the (r, r-dot) plane, keeping the section angle and the Jacobi constant
    (the tangential speed absorbs the change)."""
    mu = DEFAULT.mu if mu is None else mu
    s = np.array(section_state, dtype=float)
    j0 = float(jacobi_constant(s, mu))
    rel = s[:3].copy()
    rel[0] += mu
    r = np.linalg.norm(rel)
    er = rel / r
    v = s[3:]
    rdot = v @ er
    rc, rdc = centroid[0], centroid[1] / const.velocity_unit
    r_new = r + fraction * (rc - r)
    rd_new = rdot + fraction * (rdc - rdot)
    rel_new = er * r_new
    out = s.copy()
    out[:3] = rel_new
    out[0] -= mu
    vt = v - rdot * er
    vt_hat = vt / np.linalg.norm(vt)
    # J = 2U - rdot^2 - vt^2
    vt2 = 2 * float(pseudo_potential(out[:3], mu)) - rd_new**2 - j0
    if vt2 <= 0:
        raise ManifoldError("displacement leaves the energy surface")
    out[3:] = rd_new * er + math.sqrt(vt2) * vt_hat
    return out


def winding_number(point, polygon) -> int:
    """Winding number of a closed polygon (n, 2) around a 2-D point."""
    d = np.asarray(polygon, dtype=float) - np.asarray(point, dtype=float)
    ang = np.arctan2(d[:, 1], d[:, 0])
    step = np.diff(np.append(ang, ang[0]))
    step = (step + math.pi) % (2 * math.pi) - math.pi
    return int(round(step.sum() / (2 * math.pi)))


def separatrix_check(trajectories, point: str, n_samples: int = 10, offset: float = 0.02,
                     margin: float = 2.0, const: Constants = DEFAULT):
    """Transit outcomes of states pushed off a single-J manifold loop.

    Each of ``n_samples`` section states is moved by ``offset`` (fraction of
    the loop size) along the loop normal to both sides; the side enclosed by
    the loop is labelled interior by winding number. Returns a list of
    (interior_transits, exterior_transits) over a horizon of the trajectory's
    transfer time plus ``margin``.
    """
    trajs = sorted(trajectories, key=lambda t: t.phase)
    if len(trajs) < 3:
        raise ManifoldError("need a loop of at least 3 section states")
    proj = section_phase_projection(trajs, const)
    scale = np.ptp(proj, axis=0)
    if not np.all(scale > 0):
        raise ManifoldError("degenerate loop")
    loop = proj / scale
    n = len(loop)
    step = np.linalg.norm(np.roll(loop, -1, axis=0) - loop, axis=1)
    usable = []
    for k in range(n):
        # skip folds and tears, where a normal offset cannot be classified
        if max(step[k], step[k - 1]) > 0.1:
            continue
        tang = loop[(k + 1) % n] - loop[k - 1]
        normal = np.array([-tang[1], tang[0]]) / np.linalg.norm(tang)
        a, b = loop[k] + offset * normal, loop[k] - offset * normal
        wa, wb = winding_number(a, loop), winding_number(b, loop)
        if wa == wb or 0 not in (wa, wb):
            continue
        usable.append((k, a, b) if wa != 0 else (k, b, a))
    if len(usable) < n_samples:
        raise ManifoldError(f"only {len(usable)} classifiable loop points, need {n_samples}")
    out = []
    for j in np.linspace(0, len(usable), n_samples, endpoint=False).astype(int):
        k, a, b = usable[j]
        t = trajs[k]
        horizon = t.transfer_time + margin
        res = []
        for q in (a, b):
            s = displace_in_loop(t.section_state, q * scale, 1.0, const)
            res.append(transits(s, point, horizon))
        out.append(tuple(res))
    return out


def replay_to_orbit(traj: ManifoldTrajectory, tol: float = DEFAULT_TOL, mu: float | None = None):
    """Forward-propagate the section state by the transfer time (should land on
    the perturbed initial condition)."""
    mu = DEFAULT.mu if mu is None else mu
    return flow(traj.section_state, traj.transfer_time, tol, mu)
