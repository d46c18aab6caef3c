"""Bi-impulsive apsidal cost estimate against manifold element bands, catalog
pruning and capturable-region sampling.

One burn at each apsis of the NEO orbit: the first changes the opposite apsis
distance, the second (at the new apsis) the remaining one; the plane change
rides on either burn. Four burn orders/plane-change placements are compared
and the target point inside the band is optimized per case.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from erofinder.constants import AU_KM, MU_SUN
from erofinder.manifolds import ElementEnvelope, element_envelope
from erofinder.neo import NeoRecord, tisserand_jacobi

GRID_N = 17
DEFAULT_THRESHOLD = 1.0  # km/s
CASE_LABELS = (
    "aphelion-first/plane-change-1",
    "aphelion-first/plane-change-2",
    "perihelion-first/plane-change-1",
    "perihelion-first/plane-change-2",
)
_MU_AU = MU_SUN / AU_KM  # km^2/s^2 at 1 AU: speeds come out in km/s with r, a in AU


class FilterError(ValueError):
    pass


@njit(cache=True)
def _speed(r, a, mu):
    return math.sqrt(mu * (2.0 / r - 1.0 / a))


def dv_semimajor(r: float, a0: float, af: float, mu: float = _MU_AU) -> float:
    """Tangential burn at distance r (AU) taking a0 to af (AU); km/s."""
    for a in (a0, af):
        if 2.0 / r - 1.0 / a < 0:
            raise FilterError(f"r={r} AU is beyond the reach of an orbit with a={a} AU")
    return abs(_speed(r, af, mu) - _speed(r, a0, mu))


def dv_inclination(a0: float, r_p: float, r_a: float, delta_i: float, at: str = "aphelion",
                   mu: float = _MU_AU) -> float:
    """Plane change of ``delta_i`` rad at an apsis of the (r_p, r_a) orbit; km/s."""
    if delta_i < 0:
        raise FilterError("delta_i must be non-negative")
    if at == "aphelion":
        ratio = r_p / r_a
    elif at == "perihelion":
        ratio = r_a / r_p
    else:
        raise ValueError("at must be 'aphelion' or 'perihelion'")
    return 2.0 * math.sqrt(mu / a0) * ratio * math.sin(delta_i / 2.0)


@njit(cache=True)
def _burn_pair(r_burn, r_other, r_new, di, with_plane, mu):
    """Burn at ``r_burn`` changing the opposite apsis ``r_other`` -> ``r_new``."""
    a0 = 0.5 * (r_burn + r_other)
    af = 0.5 * (r_burn + r_new)
    dva = abs(_speed(r_burn, af, mu) - _speed(r_burn, a0, mu))
    dvi = 0.0
    if with_plane:
        # r* = (opposite apsis)/(burn apsis) of the pre-burn orbit
        dvi = 2.0 * math.sqrt(mu / a0) * (r_other / r_burn) * math.sin(0.5 * di)
    return math.sqrt(dva * dva + dvi * dvi)


@njit(cache=True)
def case_costs(rp0, ra0, i0, rpf, raf, i_f, mu):
    """Costs of the four cases (see CASE_LABELS), km/s; angles in rad."""
    di = abs(i_f - i0)
    out = np.empty(4)
    # aphelion first: move perihelion, then at the new perihelion move aphelion
    out[0] = _burn_pair(ra0, rp0, rpf, di, True, mu) + _burn_pair(rpf, ra0, raf, di, False, mu)
    out[1] = _burn_pair(ra0, rp0, rpf, di, False, mu) + _burn_pair(rpf, ra0, raf, di, True, mu)
    # perihelion first: move aphelion, then at the new aphelion move perihelion
    out[2] = _burn_pair(rp0, ra0, raf, di, True, mu) + _burn_pair(raf, rp0, rpf, di, False, mu)
    out[3] = _burn_pair(rp0, ra0, raf, di, False, mu) + _burn_pair(raf, rp0, rpf, di, True, mu)
    return out


@njit(cache=True)
def _case_cost(case, rp0, ra0, i0, x, mu):
    if x[0] > x[1]:
        return np.inf
    return case_costs(rp0, ra0, i0, x[0], x[1], x[2], mu)[case]


@njit(cache=True)
def _optimize_case(case, rp0, ra0, i0, lo, hi, n, mu):
    """17^3-style grid followed by a bounded compass search."""
    best = np.inf
    bx = np.empty(3)
    x = np.empty(3)
    for a in range(n):
        x[0] = lo[0] + (hi[0] - lo[0]) * a / (n - 1)
        for b in range(n):
            x[1] = lo[1] + (hi[1] - lo[1]) * b / (n - 1)
            for c in range(n):
                x[2] = lo[2] + (hi[2] - lo[2]) * c / (n - 1)
                v = _case_cost(case, rp0, ra0, i0, x, mu)
                if v < best:
                    best = v
                    bx[:] = x
    if not np.isfinite(best):
        return best, bx
    step = np.empty(3)
    for k in range(3):
        step[k] = (hi[k] - lo[k]) / (n - 1)
    trial = np.empty(3)
    for _ in range(200):
        improved = False
        for k in range(3):
            if step[k] <= 0.0:
                continue
            for sgn in (-1.0, 1.0):
                trial[:] = bx
                trial[k] = min(max(bx[k] + sgn * step[k], lo[k]), hi[k])
                v = _case_cost(case, rp0, ra0, i0, trial, mu)
                if v < best - 1e-15:
                    best = v
                    bx[:] = trial
                    improved = True
        if not improved:
            done = True
            for k in range(3):
                step[k] *= 0.5
                if step[k] > 1e-9 * max(1.0, abs(hi[k])):
                    done = False
            if done:
                break
    return best, bx


@njit(cache=True)
def estimate_core(rp0, ra0, i0, lo, hi, n, mu):
    """(best dv, best case, target point, per-case minima)."""
    per_case = np.empty(4)
    pts = np.empty((4, 3))
    for case in range(4):
        v, x = _optimize_case(case, rp0, ra0, i0, lo, hi, n, mu)
        per_case[case] = v
        pts[case] = x
    k = int(np.argmin(per_case))
    return per_case[k], k, pts[k].copy(), per_case


# --- bands ---------------------------------------------------------------------

@dataclass
class CaptureBand:
    """Target ranges (AU, AU, deg). Vertical bands carry an envelope with
    polynomial fits and are resolved at the NEO's Jacobi constant."""

    label: str
    point: str
    kind: str
    rp: tuple
    ra: tuple
    i_deg: tuple
    envelope: ElementEnvelope | None = None

    def __post_init__(self):
        for nm in ("rp", "ra", "i_deg"):
            lo, hi = getattr(self, nm)
            if not lo <= hi:
                raise FilterError(f"{self.label}: empty {nm} range")

    @property
    def j_dependent(self) -> bool:
        return self.envelope is not None and bool(self.envelope.fits)

    def resolve(self, jacobi: float | None = None):
        """(lo, hi) arrays over (r_p, r_a, i[rad]) and a clamped flag."""
        if self.j_dependent:
            if jacobi is None:
                raise FilterError(f"{self.label}: band depends on J")
            v, clamped = self.envelope.evaluate(jacobi)
            rp, ra, inc = (v["rp_min"], v["rp_max"]), (v["ra_min"], v["ra_max"]), (v["i_min"], v["i_max"])
            rp, ra, inc = (tuple(sorted(t)) for t in (rp, ra, inc))
        else:
            rp, ra, inc, clamped = self.rp, self.ra, self.i_deg, False
        lo = np.array([rp[0], ra[0], math.radians(inc[0])])
        hi = np.array([rp[1], ra[1], math.radians(inc[1])])
        return lo, hi, clamped

    def centroid(self, jacobi: float | None = None) -> np.ndarray:
        lo, hi, _ = self.resolve(jacobi)
        return 0.5 * (lo + hi)

    @classmethod
    def from_envelope(cls, env: ElementEnvelope, kind: str, j_min: float | None = None):
        """Planar: family-wide r ranges, i = 0. Halo: family-wide r ranges,
        i range of the highest-energy (lowest J) member. Vertical: J fits."""
        sel = np.ones(len(env.jacobi), bool) if j_min is None else env.jacobi >= j_min - 1e-12
        if not sel.any():
            raise FilterError(f"{env.family}: no envelope members above J={j_min}")
        rp = (float(env.rp_min[sel].min()), float(env.rp_max[sel].max()))
        ra = (float(env.ra_min[sel].min()), float(env.ra_max[sel].max()))
        label = env.family
        if kind == "planar":
            return cls(label, env.point, kind, rp, ra, (0.0, 0.0))
        if kind.startswith("halo"):
            k = int(np.argmin(np.where(sel, env.jacobi, np.inf)))
            return cls(label[:-1] if label[-1] in "ns" else label, env.point, "halo", rp, ra,
                       (float(env.i_min[k]), float(env.i_max[k])))
        if kind == "vertical":
            if not env.fits:
                raise FilterError(f"{label}: vertical band needs polynomial fits")
            i_all = (float(env.i_min[sel].min()), float(env.i_max[sel].max()))
            return cls(label, env.point, kind, rp, ra, i_all, env)
        raise ValueError(f"unknown kind {kind!r}")


def bands_from_sets(sets: dict) -> list:
    """One band per (point, kind) from {target: (family, manifold set)};
    halo bands come from the north set, which the south one mirrors."""
    out = []
    for lbl in sorted({t[:2] for t in sets}):
        key = lbl + "n" if lbl[1] == "H" else lbl
        if key not in sets:
            raise FilterError(f"band {lbl} needs manifold set {key}")
        fam, ms = sets[key]
        out.append(CaptureBand.from_envelope(element_envelope(ms), fam.kind))
    return out


@dataclass(frozen=True)
class FilterEstimate:
    designation: str
    target: str
    dv_total: float  # km/s
    case: str
    band_point: tuple  # (r_p AU, r_a AU, i deg)
    case_costs: tuple = ()
    clamped: bool = False


def biimpulsive_estimate(neo: NeoRecord, band: CaptureBand, n_grid: int = GRID_N,
                         mu: float = _MU_AU) -> FilterEstimate:
    jac = tisserand_jacobi(neo.a, neo.e, neo.i)
    lo, hi, clamped = band.resolve(jac)
    if lo[0] > hi[1]:
        raise FilterError(f"{band.label}: band empty at J={jac}")
    dv, case, x, per_case = estimate_core(neo.q, neo.Q, neo.i, lo, hi, n_grid, mu)
    return FilterEstimate(neo.designation, band.label, float(dv), CASE_LABELS[case],
                          (float(x[0]), float(x[1]), math.degrees(x[2])),
                          tuple(float(v) for v in per_case), clamped)


@dataclass
class PruneResult:
    designation: str
    best: FilterEstimate
    estimates: list = field(default_factory=list)

    @property
    def dv(self) -> float:
        return self.best.dv_total


def prune_catalog(catalog, bands, threshold: float = DEFAULT_THRESHOLD):
    """NEOs whose best estimate over ``bands`` is at or below ``threshold``
    (km/s), sorted by estimate then designation."""
    out = []
    for neo in catalog:
        ests = [biimpulsive_estimate(neo, b) for b in bands]
        best = min(ests, key=lambda e: (e.dv_total, e.target))
        if best.dv_total <= threshold:
            out.append(PruneResult(neo.designation, best, ests))
    out.sort(key=lambda r: (r.dv, r.designation))
    return out


# --- capturable region ---------------------------------------------------------

@dataclass
class RegionGrid:
    band: str
    threshold: float
    a: np.ndarray
    e: np.ndarray
    i_deg: np.ndarray
    dv: np.ndarray  # (na, ne, ni), km/s

    @property
    def inside(self) -> np.ndarray:
        return self.dv <= self.threshold

    def projection_ai(self) -> np.ndarray:
        """Minimum dv over e on the (a, i) grid."""
        return self.dv.min(axis=1)

    def projection_ei(self) -> np.ndarray:
        """Minimum dv over a on the (e, i) grid."""
        return self.dv.min(axis=0)

    def projection_ae(self) -> np.ndarray:
        """Minimum dv over i on the (a, e) grid."""
        return self.dv.min(axis=2)


@njit(cache=True)
def _region(a, e, inc, lo_all, hi_all, n, mu):
    out = np.empty((len(a), len(e), len(inc)))
    for p in range(len(a)):
        for q in range(len(e)):
            for r in range(len(inc)):
                k = (p * len(e) + q) * len(inc) + r
                dv, _, _, _ = estimate_core(a[p] * (1 - e[q]), a[p] * (1 + e[q]), inc[r],
                                            lo_all[k], hi_all[k], n, mu)
                out[p, q, r] = dv
    return out


def capturable_region(band: CaptureBand, dv_threshold: float = 0.5, a=None, e=None, i_deg=None,
                      n_grid: int = 9, mu: float = _MU_AU) -> RegionGrid:
    """Filter estimate over an (a, e, i) grid; default a in [0.8, 1.3] AU,
    e in [0, 0.3], i in [0, 5] deg. ``n_grid`` is the in-band search grid."""
    a = np.linspace(0.8, 1.3, 51) if a is None else np.asarray(a, dtype=float)
    e = np.linspace(0.0, 0.3, 31) if e is None else np.asarray(e, dtype=float)
    i_deg = np.linspace(0.0, 5.0, 11) if i_deg is None else np.asarray(i_deg, dtype=float)
    A, E, I = np.meshgrid(a, e, np.radians(i_deg), indexing="ij")
    los, his = [], []
    for aa, ee, ii in zip(A.ravel(), E.ravel(), I.ravel()):
        lo, hi, _ = band.resolve(tisserand_jacobi(aa, ee, ii))
        los.append(lo)
        his.append(hi)
    dv = _region(a, e, np.radians(i_deg), np.array(los), np.array(his), n_grid, mu)
    return RegionGrid(band.label, dv_threshold, a, e, i_deg, dv)


def inclination_only_cost(i_deg, mu: float = _MU_AU):
    """Plane change of ``i`` at a circular 1 AU orbit, km/s."""
    return 2.0 * math.sqrt(mu) * np.sin(np.radians(np.asarray(i_deg, dtype=float)) / 2.0)
