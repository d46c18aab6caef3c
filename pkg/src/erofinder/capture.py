"""Capture transfers: NEO departure burn, heliocentric Lambert arc, insertion
burn onto a stable-manifold trajectory, and the bookkeeping around them
(optimization, replay validation, mass budget, ERO ranking).

Timeline of one transfer (all MJD)::

    departure = insertion - tau_L          NEO -> Lambert arc
    insertion = t_ins - tau_m              Lambert arc -> manifold
    section   = t_ins - T_section          manifold crosses the +-pi/8 plane
    t_ins                                  arrival on the periodic orbit

Upstream of the section (tau_m > T_section) the manifold is continued as the
Sun-only conic through its section state; downstream it is the CR3BP arc.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numba import njit
from scipy.optimize import differential_evolution, minimize

from erofinder.constants import DEFAULT, MJD_J2000, Constants, mjd_from_iso
from erofinder.cr3bp.dynamics import DEFAULT_TOL, PropagationError, flow
from erofinder.cr3bp.frames import rotating_to_heliocentric
from erofinder.kepler import elements_to_state, propagate_universal, solve_kepler
from erofinder.lambert import HIGH, LOW, lambert_core
from erofinder.lpo import CorrectionError, OrbitFamily, orbit_at_jacobi
from erofinder.manifolds import (
    EPSILON,
    T_MAX,
    ManifoldSet,
    globalize_to_section,
    stable_direction,
    DEFAULT_BRANCH,
)
from erofinder.neo import NeoRecord, neo_state_at, validity_window

log = logging.getLogger(__name__)

DAY_S = 86400.0
PENALTY = 100.0  # km/s, infeasible decision vectors
CASES = ((0, "low"), (1, "low"), (1, "high"), (2, "low"), (2, "high"), (3, "low"), (3, "high"))
DEFAULT_WINDOW = ("2016-01-01", "2100-12-31")
UPSTREAM_LIMIT_DAYS = 1000.0  # global-phase insertion limit before the section
DENSITY = 2600.0  # kg/m^3
DRY_MASS = 2442.0
WET_MASS = 5574.0


class CaptureError(RuntimeError):
    pass


# --- decision vector / solution ------------------------------------------------------

@dataclass(frozen=True)
class DecisionVector:
    """t_ins [MJD] arrival on the periodic orbit; jacobi of the target member;
    sigma in [0, 1) phase on the orbit; tau_m [nondim] manifold time from the
    insertion point to arrival; tau_l [days] Lambert time of flight."""

    t_ins: float
    jacobi: float
    sigma: float
    tau_m: float
    tau_l: float
    revs: int = 0
    branch: str = "low"

    @property
    def case(self) -> str:
        return f"{self.revs}{'' if self.revs == 0 else self.branch[0].upper()}"


@dataclass(frozen=True)
class TransferSolution:
    designation: str
    target: str
    decision: DecisionVector
    dv_dep: float  # m/s
    dv_ins: float  # m/s
    departure: float  # MJD
    insertion: float  # MJD
    arrival: float  # MJD
    section_time: float  # nondim, section -> arrival
    isp: float = 300.0
    mass_t: float = math.nan
    diameter_m: float = math.nan
    exact: bool = True
    constraint_ok: bool = True

    @property
    def dv_total(self) -> float:
        return self.dv_dep + self.dv_ins

    @property
    def duration_years(self) -> float:
        return (self.arrival - self.departure) / 365.25

    @property
    def insertion_before_section_days(self) -> float:
        return DEFAULT.nd_to_days(self.decision.tau_m - self.section_time)

    def as_record(self) -> dict:
        d = asdict(self)
        d.pop("decision")
        d.update({f"x_{k}": v for k, v in asdict(self.decision).items()})
        d["dv_total"] = self.dv_total
        d["duration_years"] = self.duration_years
        return d


# --- target manifold tables ---------------------------------------------------------

@dataclass
class TargetManifold:
    """Section states of one target family on a (member, phase) grid plus the
    family itself for exact re-propagation."""

    label: str
    family: OrbitFamily
    jacobi: np.ndarray  # (m,) ascending
    section: np.ndarray  # (m, n, 6) rotating
    t_section: np.ndarray  # (m, n) nondim
    reached: np.ndarray  # (m, n)
    epsilon: float = EPSILON
    branch: int = 1
    t_max: float = T_MAX
    tol: float = DEFAULT_TOL
    _orbits: dict = field(default_factory=dict, repr=False)

    @property
    def point(self) -> str:
        return self.family.point

    @property
    def n_phases(self) -> int:
        return self.section.shape[1]

    @property
    def j_range(self) -> tuple:
        # halo amplitude grows like sqrt(J_bif - J): the gap between the
        # bifurcation member and the next one is not interpolable
        top = -2 if self.family.kind.startswith("halo") and len(self.jacobi) > 2 else -1
        return float(self.jacobi[0]), float(self.jacobi[top])

    @classmethod
    def from_set(cls, family: OrbitFamily, mset: ManifoldSet, tol: float = DEFAULT_TOL):
        members = np.unique(mset.member)
        n = int(np.sum(mset.member == members[0]))
        m = len(members)
        jac = np.empty(m)
        sec = np.full((m, n, 6), np.nan)
        ts = np.full((m, n), np.nan)
        ok = np.zeros((m, n), bool)
        for a, k in enumerate(members):
            sel = np.nonzero(mset.member == k)[0]
            order = sel[np.argsort(mset.phase[sel])]
            if len(order) != n:
                raise CaptureError("manifold set has uneven phase sampling")
            jac[a] = mset.jacobi[order[0]]
            sec[a] = mset.section_state[order]
            ts[a] = mset.transfer_time[order]
            ok[a] = mset.reached[order]
        idx = np.argsort(jac)
        br = int(mset.branch[0]) if len(mset) else DEFAULT_BRANCH[family.point]
        return cls(family.label, family, jac[idx], sec[idx], ts[idx], ok[idx], mset.epsilon, br,
                   tol=tol)

    def nearest_member(self, jacobi: float) -> int:
        return int(np.argmin(np.abs(self.jacobi - jacobi)))

    def interpolated(self, jacobi: float, sigma: float):
        """Nearest-member, phase-interpolated (section state, T_section) or None."""
        return _interp_section(self.jacobi, self.section, self.t_section, self.reached,
                               float(jacobi), float(sigma))

    def orbit(self, jacobi: float):
        key = float(jacobi)
        if key not in self._orbits:
            if len(self._orbits) > 256:
                self._orbits.clear()
            self._orbits[key] = orbit_at_jacobi(self.family, key, self.tol)
        return self._orbits[key]

    def exact(self, jacobi: float, sigma: float):
        """(initial condition, section state, T_section) by re-propagation at
        exactly (J, sigma); None when the trajectory misses the section."""
        try:
            orb = self.orbit(jacobi)
        except (CorrectionError, PropagationError, ValueError) as exc:
            log.debug("%s: no orbit at J=%.12f (%s)", self.label, jacobi, exc)
            return None
        states, dirs = stable_direction(orb, [sigma % 1.0], self.tol)
        ic = states[0] + self.branch * self.epsilon * dirs[0]
        res = globalize_to_section(ic, orb.point, self.t_max, self.tol, orb.mu)
        if res is None:
            return None
        return ic, res[0], res[1]


@njit(cache=True)
def _interp_section(jac, sec, tsec, reached, J, sigma):
    m = len(jac)
    a = 0
    best = abs(jac[0] - J)
    for k in range(1, m):
        d = abs(jac[k] - J)
        if d < best:
            best = d
            a = k
    n = sec.shape[1]
    s = (sigma % 1.0) * n
    k0 = int(math.floor(s)) % n
    k1 = (k0 + 1) % n
    w = s - math.floor(s)
    if not (reached[a, k0] and reached[a, k1]):
        return None
    st = (1.0 - w) * sec[a, k0] + w * sec[a, k1]
    t = (1.0 - w) * tsec[a, k0] + w * tsec[a, k1]
    return st, t


# --- cost kernel -----------------------------------------------------------------------

@njit(cache=True)
def _rot_to_helio(s, mjd, mu, au, vu, lon0, rate):
    th = lon0 + (mjd - MJD_J2000) * rate
    c = math.cos(th)
    sn = math.sin(th)
    x = s[0] + mu
    y = s[1]
    vx = s[3] - y
    vy = s[4] + x
    out = np.empty(6)
    out[0] = (c * x - sn * y) * au
    out[1] = (sn * x + c * y) * au
    out[2] = s[2] * au
    out[3] = (c * vx - sn * vy) * vu
    out[4] = (sn * vx + c * vy) * vu
    out[5] = s[5] * vu
    return out


@njit(cache=True)
def _neo_state(el, mjd, mu_s):
    # el = (a_km, e, i, raan, argp, M0, epoch, n [rad/day])
    M = el[5] + el[7] * (mjd - el[6])
    E = solve_kepler(M, el[1], 1e-13)
    nu = 2.0 * math.atan2(math.sqrt(1 + el[1]) * math.sin(E / 2), math.sqrt(1 - el[1]) * math.cos(E / 2))
    return elements_to_state(el[0], el[1], el[2], el[3], el[4], nu, mu_s)


@njit(cache=True)
def _transfer(neo_el, h_sec, t_sec_epoch, tau_up_s, t_dep, tof_s, revs, branch, mu_s, href):
    """(dv_dep, dv_ins, ok) in km/s for a manifold conic given at its section."""
    man = propagate_universal(h_sec, -tau_up_s, mu_s)
    ns = _neo_state(neo_el, t_dep, mu_s)
    v1, v2, it, ok = lambert_core(ns[:3].copy(), man[:3].copy(), tof_s, mu_s, revs, branch, href)
    if not ok:
        return PENALTY, PENALTY, False
    d1 = 0.0
    d2 = 0.0
    for k in range(3):
        d1 += (v1[k] - ns[3 + k]) ** 2
        d2 += (man[3 + k] - v2[k]) ** 2
    return math.sqrt(d1), math.sqrt(d2), True


@njit(cache=True)
def _cost_batch(X, jac, sec, tsec, reached, neo_el, revs, branch, win, up_max_days, consts, href):
    """X: (5, N) rows t_ins, J, sigma, u (fraction of up_max_days upstream), tau_L [days]."""
    mu, au, vu, lon0, rate, tu, mu_s = (consts[0], consts[1], consts[2], consts[3], consts[4],
                                        consts[5], consts[6])
    N = X.shape[1]
    out = np.empty(N)
    for q in range(N):
        t_ins = X[0, q]
        r = _interp_section(jac, sec, tsec, reached, X[1, q], X[2, q])
        if r is None:
            out[q] = PENALTY
            continue
        st, T = r
        up_days = X[3, q] * up_max_days
        tof = X[4, q]
        t_sec_ep = t_ins - T * tu / DAY_S
        t_m = t_sec_ep - up_days
        t_dep = t_m - tof
        viol = 0.0
        if t_dep < win[0]:
            viol += win[0] - t_dep
        if t_dep > win[1]:
            viol += t_dep - win[1]
        if viol > 0.0:
            out[q] = PENALTY + viol / 365.25
            continue
        h = _rot_to_helio(st, t_sec_ep, mu, au, vu, lon0, rate)
        d1, d2, ok = _transfer(neo_el, h, t_sec_ep, up_days * DAY_S, t_dep, tof * DAY_S, revs,
                               branch, mu_s, href)
        out[q] = d1 + d2 if ok else PENALTY
    return out


def _consts(const: Constants) -> np.ndarray:
    return np.array([const.mu, const.au, const.velocity_unit, const.earth_longitude_j2000,
                     DAY_S / const.time_unit, const.time_unit, const.mu_sun])


def _neo_array(neo: NeoRecord, const: Constants) -> np.ndarray:
    return np.array([neo.a * const.au, neo.e, neo.i, neo.raan, neo.argp, neo.M0, neo.epoch,
                     neo.mean_motion(const)])


_ZHAT = np.array([0.0, 0.0, 1.0])


# --- exact evaluation ---------------------------------------------------------------

@dataclass(frozen=True)
class TransferLegs:
    """Full state detail of one evaluated transfer (heliocentric km, km/s)."""

    neo_state: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    manifold_state: np.ndarray
    section_helio: np.ndarray
    section_rot: np.ndarray
    initial_condition: np.ndarray
    t_section: float
    departure: float
    insertion: float
    section_epoch: float

    @property
    def dv_dep(self) -> float:
        return float(np.linalg.norm(self.v1 - self.neo_state[3:]))

    @property
    def dv_ins(self) -> float:
        return float(np.linalg.norm(self.manifold_state[3:] - self.v2))


def evaluate_exact(neo: NeoRecord, target: TargetManifold, x: DecisionVector,
                   const: Constants = DEFAULT) -> TransferLegs:
    """Exact legs at ``x`` (manifold re-propagated at (J, sigma))."""
    ex = target.exact(x.jacobi, x.sigma)
    if ex is None:
        raise CaptureError("manifold trajectory does not reach the section")
    ic, sec, T = ex
    if x.tau_m < T - 1e-12:
        raise CaptureError("insertion downstream of the section")
    tu_days = const.time_unit / DAY_S
    t_sec_ep = x.t_ins - T * tu_days
    t_m = x.t_ins - x.tau_m * tu_days
    t_dep = t_m - x.tau_l
    h = rotating_to_heliocentric(sec, t_sec_ep, const)
    man = propagate_universal(h, -(t_sec_ep - t_m) * DAY_S, const.mu_sun)
    ns = neo_state_at(neo, t_dep, const, check_window=False)
    b = HIGH if (x.revs > 0 and x.branch == "high") else LOW
    v1, v2, _, ok = lambert_core(ns[:3].copy(), man[:3].copy(), x.tau_l * DAY_S, const.mu_sun,
                                 int(x.revs), b, _ZHAT)
    if not ok:
        raise CaptureError("Lambert problem has no solution for this case")
    return TransferLegs(ns, v1, v2, man, h, sec, ic, T, t_dep, t_m, t_sec_ep)


def transfer_cost(neo: NeoRecord, target: TargetManifold, x: DecisionVector,
                  const: Constants = DEFAULT, exact: bool = True):
    """(dv_dep, dv_ins) in km/s. ``exact=False`` uses the tabulated manifold."""
    if exact:
        legs = evaluate_exact(neo, target, x, const)
        return legs.dv_dep, legs.dv_ins
    r = target.interpolated(x.jacobi, x.sigma)
    if r is None:
        raise CaptureError("manifold trajectory does not reach the section")
    st, T = r
    tu_days = const.time_unit / DAY_S
    t_sec_ep = x.t_ins - T * tu_days
    up = x.tau_m * tu_days - T * tu_days
    h = rotating_to_heliocentric(st, t_sec_ep, const)
    b = HIGH if (x.revs > 0 and x.branch == "high") else LOW
    d1, d2, ok = _transfer(_neo_array(neo, const), h, t_sec_ep, up * DAY_S,
                           t_sec_ep - up - x.tau_l, x.tau_l * DAY_S, int(x.revs), b,
                           const.mu_sun, _ZHAT)
    if not ok:
        raise CaptureError("Lambert problem has no solution for this case")
    return d1, d2


# --- optimization ----------------------------------------------------------------------

@dataclass(frozen=True)
class SearchSettings:
    popsize: int = 40  # individuals
    generations: int = 300
    restarts: int = 8
    seed: int = 0
    max_upstream_days: float = UPSTREAM_LIMIT_DAYS  # global phase
    local_upstream_days: float = 3650.0  # released constraint
    tof_min_days: float = 0.5
    rev_tof_days: tuple = (300.0, 420.0)  # per-revolution lower / upper TOF
    local_maxiter: int = 2000
    isp: float = 300.0


def _tof_bounds(revs: int, s: SearchSettings):
    lo = max(s.tof_min_days, s.rev_tof_days[0] * revs)
    return lo, s.rev_tof_days[1] * (revs + 1)


def _window_mjd(window):
    lo, hi = window
    return (mjd_from_iso(lo) if isinstance(lo, str) else float(lo),
            mjd_from_iso(hi) if isinstance(hi, str) else float(hi))


def _solution(neo, target, x, legs, const, isp, wet, dry, exact=True):
    constraint_ok = legs.section_epoch - legs.insertion <= UPSTREAM_LIMIT_DAYS + 1e-9
    dv_dep, dv_ins = legs.dv_dep * 1e3, legs.dv_ins * 1e3
    try:
        mass, diam = mass_budget(dv_dep + dv_ins, wet, dry, isp, const.g0)
    except ValueError:
        mass, diam = math.nan, math.nan
    return TransferSolution(neo.designation, target.label, x, dv_dep, dv_ins, legs.departure,
                            legs.insertion, x.t_ins, legs.t_section, isp, mass, diam, exact,
                            constraint_ok)


def _from_vector(v, T, revs, branch, up_max_days, const):
    tu_days = const.time_unit / DAY_S
    tau_m = T + v[3] * up_max_days / tu_days
    return DecisionVector(float(v[0]), float(v[1]), float(v[2]) % 1.0, float(tau_m), float(v[4]),
                          revs, branch)


def _search_case(args):
    """Best DE vector over restarts for one discrete case (picklable for pools)."""
    (revs, b, bounds, tables, neo_el, win, up, consts, popsize, generations, seeds) = args
    jac, sec, tsec, reached = tables

    def f(X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return _cost_batch(np.ascontiguousarray(X), jac, sec, tsec, reached, neo_el, revs, b, win,
                           up, consts, _ZHAT)

    best_v, best_f = None, math.inf
    for child in seeds:
        res = differential_evolution(
            f, bounds, popsize=max(1, popsize // len(bounds)), maxiter=generations, tol=0.0,
            atol=0.0, polish=False, seed=np.random.default_rng(child), vectorized=True,
            updating="deferred", init="latinhypercube")
        if res.fun < best_f:
            best_f, best_v = float(res.fun), res.x
    return best_v, best_f


def global_search(neo: NeoRecord, target: TargetManifold, window=DEFAULT_WINDOW,
                  settings: SearchSettings = SearchSettings(), cases=CASES,
                  const: Constants = DEFAULT, wet: float = WET_MASS, dry: float = DRY_MASS,
                  workers: int = 1):
    """Best solution per (revs, branch) case by multi-start differential
    evolution on the tabulated manifold; returned solutions are re-evaluated
    exactly. Insertion is at most ``max_upstream_days`` before the section."""
    arr_lo, arr_hi = _window_mjd(window)
    v_lo, v_hi = validity_window(neo, const)
    t_max_days = float(np.nanmax(target.t_section)) * const.time_unit / DAY_S
    up = settings.max_upstream_days
    # latest useful arrival: departure at the window end plus the longest transfer
    tof_hi_all = _tof_bounds(max(c[0] for c in cases), settings)[1]
    arr_hi = min(arr_hi, v_hi + t_max_days + up + tof_hi_all)
    if arr_hi <= arr_lo:
        raise CaptureError(f"{neo.designation}: arrival window is empty")
    win = np.array([v_lo, v_hi if math.isfinite(v_hi) else 1e9])
    consts = _consts(const)
    neo_el = _neo_array(neo, const)
    tables = (target.jacobi, target.section, target.t_section, target.reached)
    jl, jh = target.j_range
    jobs = []
    for revs, branch in cases:
        b = HIGH if (revs > 0 and branch == "high") else LOW
        tl, th = _tof_bounds(revs, settings)
        bounds = [(arr_lo, arr_hi), (jl, jh), (0.0, 1.0), (0.0, 1.0), (tl, th)]
        seeds = np.random.SeedSequence([settings.seed, revs, int(b)]).spawn(settings.restarts)
        jobs.append((revs, b, bounds, tables, neo_el, win, up, consts, settings.popsize,
                     settings.generations, seeds))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_search_case, jobs))
    else:
        results = [_search_case(j) for j in jobs]
    out = []
    for (revs, branch), (best_v, best_f) in zip(cases, results):
        if best_f >= PENALTY:
            log.info("%s -> %s case %d%s: infeasible", neo.designation, target.label, revs, branch)
            continue
        # exact re-evaluation at the continuous (J, sigma)
        ex = target.exact(best_v[1], best_v[2])
        if ex is None:
            continue
        x = _from_vector(best_v, ex[2], revs, branch, up, const)
        try:
            legs = evaluate_exact(neo, target, x, const)
        except CaptureError:
            continue
        out.append(_solution(neo, target, x, legs, const, settings.isp, wet, dry))
        log.info("%s -> %s case %s: %.1f m/s (table %.1f)", neo.designation, target.label,
                 x.case, out[-1].dv_total, best_f * 1e3)
    out.sort(key=lambda s: (s.dv_total, s.decision.revs, s.decision.branch))
    if not out:
        raise CaptureError(f"{neo.designation} -> {target.label}: no feasible transfer")
    return out


def local_refine(sol: TransferSolution, neo: NeoRecord, target: TargetManifold,
                 settings: SearchSettings = SearchSettings(), window=DEFAULT_WINDOW,
                 const: Constants = DEFAULT, wet: float = WET_MASS, dry: float = DRY_MASS):
    """Bounded Nelder-Mead on the exact model with the upstream-insertion
    limit released; the input is returned if nothing better is found."""
    x0 = sol.decision
    arr_lo, arr_hi = _window_mjd(window)
    v_lo, v_hi = validity_window(neo, const)
    tu_days = const.time_unit / DAY_S
    jl, jh = target.j_range
    tl, th = _tof_bounds(x0.revs, settings)
    up_max = settings.local_upstream_days

    def decode(v):
        ex = target.exact(v[1], v[2])
        if ex is None:
            return None, None
        T = ex[2]
        x = DecisionVector(float(v[0]), float(v[1]), float(v[2]) % 1.0,
                           T + float(v[3]) / tu_days, float(v[4]), x0.revs, x0.branch)
        return x, T

    def cost(v):
        if not (jl <= v[1] <= jh):
            return PENALTY
        try:
            x, _ = decode(v)
            if x is None:
                return PENALTY
            legs = evaluate_exact(neo, target, x, const)
        except (CaptureError, PropagationError, ValueError, np.linalg.LinAlgError):
            return PENALTY
        if not v_lo <= legs.departure <= v_hi:
            return PENALTY + abs(legs.departure - np.clip(legs.departure, v_lo, v_hi)) / 365.25
        return legs.dv_dep + legs.dv_ins

    v0 = np.array([x0.t_ins, x0.jacobi, x0.sigma, (x0.tau_m - sol.section_time) * tu_days, x0.tau_l])
    f0 = cost(v0)
    bounds = [(arr_lo, arr_hi), (jl, jh), (x0.sigma - 0.5, x0.sigma + 0.5), (0.0, up_max), (tl, th)]
    v0c = np.array([min(max(v, lo), hi) for v, (lo, hi) in zip(v0, bounds)])
    scale = np.array([5.0, 1e-6, 0.01, 20.0, 5.0])
    simplex = np.vstack([v0c] + [np.clip(v0c + np.eye(5)[k] * scale[k], [b[0] for b in bounds],
                                         [b[1] for b in bounds]) for k in range(5)])
    res = minimize(cost, v0c, method="Nelder-Mead", bounds=bounds,
                   options={"maxiter": settings.local_maxiter, "xatol": 1e-9, "fatol": 1e-10,
                            "initial_simplex": simplex})
    if not res.fun < f0:
        return sol
    x, _ = decode(res.x)
    legs = evaluate_exact(neo, target, x, const)
    new = _solution(neo, target, x, legs, const, settings.isp, wet, dry)
    return new if new.dv_total < sol.dv_total else sol


def optimize_transfer(neo: NeoRecord, target: TargetManifold, window=DEFAULT_WINDOW,
                      settings: SearchSettings = SearchSettings(), refine_top: int = len(CASES),
                      cases=CASES, const: Constants = DEFAULT, wet: float = WET_MASS,
                      dry: float = DRY_MASS, workers: int = 1):
    """Global search followed by exact local refinement of the ``refine_top``
    best cases; returns all case solutions sorted by dv (best first)."""
    sols = global_search(neo, target, window, settings, cases, const, wet, dry, workers)
    head = [local_refine(s, neo, target, settings, window, const, wet, dry)
            for s in sols[:refine_top]]
    out = head + sols[refine_top:]
    out.sort(key=lambda s: (s.dv_total, s.decision.revs, s.decision.branch))
    return out


def select_solution(solutions, tie_ms: float = 0.0) -> TransferSolution:
    """Minimum-dv solution; among those within ``tie_ms`` of it the shortest
    mission wins (successive synodic opportunities differ by a few m/s)."""
    if not solutions:
        raise CaptureError("no solutions to select from")
    best = min(s.dv_total for s in solutions)
    near = [s for s in solutions if s.dv_total <= best + tie_ms]
    return min(near, key=lambda s: (s.duration_years, s.dv_total))


# --- replay validation ------------------------------------------------------------------

@dataclass(frozen=True)
class ReplayReport:
    neo_position_km: float
    neo_velocity_ms: float
    lambert_position_km: float
    lambert_velocity_ms: float
    upstream_position_km: float
    upstream_velocity_ms: float
    manifold_position_km: float
    manifold_velocity_ms: float
    dv_mismatch_ms: float

    @property
    def max_position_km(self) -> float:
        return max(self.neo_position_km, self.lambert_position_km, self.upstream_position_km,
                   self.manifold_position_km)

    @property
    def max_velocity_ms(self) -> float:
        return max(self.neo_velocity_ms, self.lambert_velocity_ms, self.upstream_velocity_ms,
                   self.manifold_velocity_ms, self.dv_mismatch_ms)

    def ok(self, pos_km: float = 1.0, vel_ms: float = 1e-3) -> bool:
        return self.max_position_km < pos_km and self.max_velocity_ms < vel_ms


def _gap(a, b):
    return float(np.linalg.norm(a[:3] - b[:3])), float(np.linalg.norm(a[3:] - b[3:]) * 1e3)


def replay(sol: TransferSolution, neo: NeoRecord, target: TargetManifold,
           const: Constants = DEFAULT, tol: float | None = None) -> ReplayReport:
    """Forward re-simulation of every leg of ``sol``.

    NEO: universal-variable propagation from the element-epoch state vs the
    Kepler-equation ephemeris. Lambert: the departure state (NEO + dv_dep)
    propagated over tau_L vs the insertion point. Upstream manifold: the
    insertion state propagated forward to the section epoch vs the section
    state. Manifold: CR3BP backward arc from the initial condition,
    re-run through the generic flow map at the target's tolerance, vs the
    section state located by the event search.
    """
    legs = evaluate_exact(neo, target, sol.decision, const)
    ep_state = neo_state_at(neo, neo.epoch, const, check_window=False)
    ns = propagate_universal(ep_state, (legs.departure - neo.epoch) * DAY_S, const.mu_sun)
    g_neo = _gap(ns, legs.neo_state)
    dep = np.concatenate([legs.neo_state[:3], legs.v1])
    arr = propagate_universal(dep, sol.decision.tau_l * DAY_S, const.mu_sun)
    g_lam = _gap(arr, np.concatenate([legs.manifold_state[:3], legs.v2]))
    fwd = propagate_universal(legs.manifold_state, (legs.section_epoch - legs.insertion) * DAY_S,
                              const.mu_sun)
    g_up = _gap(fwd, legs.section_helio)
    back = flow(legs.initial_condition, -legs.t_section, target.tol if tol is None else tol, const.mu)
    g_man = _gap(rotating_to_heliocentric(back, legs.section_epoch, const), legs.section_helio)
    dv_err = abs(legs.dv_dep * 1e3 - sol.dv_dep) + abs(legs.dv_ins * 1e3 - sol.dv_ins)
    return ReplayReport(*g_neo, *g_lam, *g_up, *g_man, dv_err)


def manifold_arrival_error(sol: TransferSolution, target: TargetManifold,
                           const: Constants = DEFAULT) -> float:
    """Distance [km] between the forward CR3BP flow from the section state and
    the periodic-orbit initial condition (bounded by the amplification of
    integration error along the unstable direction)."""
    ex = target.exact(sol.decision.jacobi, sol.decision.sigma)
    ic, sec, T = ex
    end = flow(sec, T, DEFAULT_TOL, const.mu)
    return float(np.linalg.norm(end[:3] - ic[:3]) * const.au)


# --- mass budget / ranking -------------------------------------------------------------

def mass_budget(dv: float, wet_mass: float = WET_MASS, dry_mass: float = DRY_MASS,
                isp: float = 300.0, g0: float = DEFAULT.g0, density: float = DENSITY):
    """Retrievable asteroid mass [t] and equal-mass sphere diameter [m] for a
    total dv [m/s]: the propellant (wet - dry) pushes spacecraft plus asteroid."""
    prop = wet_mass - dry_mass
    if prop <= 0:
        raise ValueError("wet mass must exceed dry mass")
    if dv <= 0:
        raise ValueError("dv must be positive")
    m = prop / math.expm1(dv / (g0 * isp)) - dry_mass
    if m <= 0:
        raise ValueError(f"dv={dv} m/s leaves no retrievable mass")
    d = (6.0 * m / (math.pi * density)) ** (1.0 / 3.0)
    return m / 1e3, d


@dataclass(frozen=True)
class EroEntry:
    rank: int
    designation: str
    best_dv: float  # m/s
    targets: tuple  # ((label, dv m/s), ...) ascending


def rank_eros(solutions, threshold: float = 500.0):
    """NEOs with at least one solution below ``threshold`` m/s. Each lists its
    qualifying targets (best solution per target) by dv; the catalog is sorted
    by best dv. Accepts TransferSolution objects or (designation, target, dv)."""
    best: dict = {}
    for s in solutions:
        if isinstance(s, TransferSolution):
            name, tgt, dv = s.designation, s.target, s.dv_total
        else:
            name, tgt, dv = s
        if dv < threshold:
            cur = best.setdefault(name, {})
            if tgt not in cur or dv < cur[tgt]:
                cur[tgt] = float(dv)
    rows = []
    for name, tg in best.items():
        items = tuple(sorted(tg.items(), key=lambda kv: (kv[1], kv[0])))
        rows.append((items[0][1], name, items))
    rows.sort()
    return [EroEntry(k + 1, name, dv, items) for k, (dv, name, items) in enumerate(rows)]


def best_per_target(solutions):
    out = {}
    for s in solutions:
        key = (s.designation, s.target)
        if key not in out or s.dv_total < out[key].dv_total:
            out[key] = s
    return sorted(out.values(), key=lambda s: (s.designation, s.dv_total))


def with_isp(sol: TransferSolution, isp: float, wet: float = WET_MASS, dry: float = DRY_MASS,
             const: Constants = DEFAULT) -> TransferSolution:
    try:
        m, d = mass_budget(sol.dv_total, wet, dry, isp, const.g0)
    except ValueError:
        m, d = math.nan, math.nan
    return replace(sol, isp=isp, mass_t=m, diameter_m=d)
