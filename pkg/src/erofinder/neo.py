"""NEO catalog: ingestion, classification, size estimate and two-body ephemerides.

Angles are radians inside :class:`NeoRecord`; files carry degrees.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.optimize import minimize_scalar

from erofinder.constants import DEFAULT, Constants, iso_from_mjd, mjd_from_iso
from erofinder.kepler import elements_to_state, solve_kepler, true_from_mean

log = logging.getLogger(__name__)

ATIRA, ATEN, APOLLO, AMOR, OTHER = "Atira", "Aten", "Apollo", "Amor", "Other"
FAMILIES = (ATIRA, ATEN, APOLLO, AMOR)
EARTH_APHELION = 0.983
EARTH_PERIHELION = 1.017
AMOR_LIMIT = 1.3
SEA_A = (0.95, 1.05)
SEA_E = (0.0, 0.1)
SEA_I_DEG = (0.0, 10.0)
SEA_DIAMETER_M = 50.0
DIAMETER_COEFF_KM = 1329.0
ALBEDO_RANGE = (0.05, 0.50)
CLOSE_APPROACH_AU = 0.05
SCAN_YEARS = 150.0
SCAN_STEP_DAYS = 1.0
_JD_MJD = 2400000.5


class CatalogError(ValueError):
    """Unreadable catalog file (missing columns, ambiguous units)."""


class ValidityWarning(UserWarning):
    """Ephemeris requested outside the element validity window."""


# --- closed forms ---------------------------------------------------------------

def classify_family(a: float, e: float) -> str:
    """NEO class from perihelion q and aphelion Q (AU); ``Other`` beyond q = 1.3."""
    q, Q = a * (1 - e), a * (1 + e)
    if a < 1.0:
        return ATIRA if Q < EARTH_APHELION else ATEN
    if q <= EARTH_PERIHELION:
        return APOLLO
    if q <= AMOR_LIMIT:
        return AMOR
    return OTHER


def tisserand_jacobi(a: float, e: float, i: float) -> float:
    """Tisserand approximation of the Jacobi constant (a in AU, i in rad)."""
    return 1.0 / a + 2.0 * math.sqrt(a * (1.0 - e * e)) * math.cos(i)


def diameter(H: float, albedo: float) -> float:
    """Equivalent diameter in metres."""
    return DIAMETER_COEFF_KM * 1e3 * 10.0 ** (-H / 5.0) / math.sqrt(albedo)


def absolute_magnitude(d_m: float, albedo: float) -> float:
    """Inverse of :func:`diameter`."""
    return -5.0 * math.log10(d_m * math.sqrt(albedo) / (DIAMETER_COEFF_KM * 1e3))


@dataclass(frozen=True)
class DiameterRange:
    d_min: float
    d_max: float
    albedo: tuple = ALBEDO_RANGE

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")


def diameter_range(H: float, albedo=ALBEDO_RANGE) -> DiameterRange:
    """Bright (largest albedo) gives the minimum, dark the maximum."""
    if not math.isfinite(H):
        raise ValueError("H must be finite")
    lo, hi = sorted(albedo)
    return DiameterRange(diameter(H, hi), diameter(H, lo), (lo, hi))


def sea_flag(a: float, e: float, i: float, H: float, strict: bool = False) -> bool:
    """Small-Earth-Approacher box (i in rad).

    The size test passes when some albedo in range gives d < 50 m; with
    ``strict`` the dark-albedo (largest) diameter must be below 50 m.
    """
    if not (SEA_A[0] <= a <= SEA_A[1] and SEA_E[0] <= e <= SEA_E[1]
            and SEA_I_DEG[0] <= math.degrees(i) <= SEA_I_DEG[1]):
        return False
    if not math.isfinite(H):
        return False
    dr = diameter_range(H)
    return (dr.d_max if strict else dr.d_min) < SEA_DIAMETER_M


# --- records ---------------------------------------------------------------------

@dataclass(frozen=True)
class NeoRecord:
    """Osculating heliocentric elements: a [AU], angles [rad], epoch [MJD]."""

    designation: str
    a: float
    e: float
    i: float
    raan: float
    argp: float
    M0: float
    epoch: float
    H: float
    moid: float | None = None
    family: str = ""
    sea_flag: bool = False

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"{self.designation}: a must be positive")
        if not 0 <= self.e < 1:
            raise ValueError(f"{self.designation}: e={self.e} is not elliptic")
        if not 0 <= self.i <= math.pi:
            raise ValueError(f"{self.designation}: inclination out of [0, 180] deg")
        if not self.family:
            object.__setattr__(self, "family", classify_family(self.a, self.e))
            object.__setattr__(self, "sea_flag", sea_flag(self.a, self.e, self.i, self.H))

    @classmethod
    def from_degrees(cls, designation, a, e, i, raan, argp, M0, epoch, H, moid=None):
        """``epoch`` may be MJD or an ISO date string."""
        ep = mjd_from_iso(epoch) if isinstance(epoch, str) else float(epoch)
        return cls(designation, float(a), float(e), math.radians(i), math.radians(raan) % (2 * math.pi),
                   math.radians(argp) % (2 * math.pi), math.radians(M0) % (2 * math.pi), ep,
                   float(H), None if moid is None else float(moid))

    @property
    def q(self) -> float:
        return self.a * (1 - self.e)

    @property
    def Q(self) -> float:
        return self.a * (1 + self.e)

    @property
    def jacobi(self) -> float:
        return tisserand_jacobi(self.a, self.e, self.i)

    @property
    def diameters(self) -> DiameterRange:
        return diameter_range(self.H)

    def period_days(self, const: Constants = DEFAULT) -> float:
        a_km = self.a * const.au
        return 2 * math.pi * math.sqrt(a_km**3 / const.mu_sun) / 86400.0

    def mean_motion(self, const: Constants = DEFAULT) -> float:
        """rad/day"""
        return 2 * math.pi / self.period_days(const)


@njit(cache=True)
def _positions(a, e, i, raan, argp, M0, n, dt_days):
    out = np.empty((len(dt_days), 3))
    for k in range(len(dt_days)):
        nu = true_from_mean(M0 + n * dt_days[k], e)
        st = elements_to_state(a, e, i, raan, argp, nu, 1.0)
        out[k, 0] = st[0]
        out[k, 1] = st[1]
        out[k, 2] = st[2]
    return out


def neo_positions(rec: NeoRecord, mjd, const: Constants = DEFAULT) -> np.ndarray:
    """Heliocentric positions [AU] at an array of epochs (no validity check)."""
    dt = np.ascontiguousarray(np.atleast_1d(np.asarray(mjd, dtype=float)) - rec.epoch)
    return _positions(rec.a, rec.e, rec.i, rec.raan, rec.argp, rec.M0, rec.mean_motion(const), dt)


def earth_positions(mjd, const: Constants = DEFAULT) -> np.ndarray:
    """Circular-orbit Earth positions [AU]."""
    th = const.earth_longitude(np.atleast_1d(np.asarray(mjd, dtype=float)))
    return np.column_stack([np.cos(th), np.sin(th), np.zeros_like(th)])


def earth_distance(rec: NeoRecord, mjd, const: Constants = DEFAULT) -> np.ndarray:
    return np.linalg.norm(neo_positions(rec, mjd, const) - earth_positions(mjd, const), axis=1)


def next_close_approach(rec: NeoRecord, after: float | None = None,
                        threshold_au: float = CLOSE_APPROACH_AU, years: float = SCAN_YEARS,
                        const: Constants = DEFAULT):
    """(epoch of minimum distance, distance) of the first approach within
    ``threshold_au`` that begins after ``after`` (default: the element epoch).

    An approach already in progress at ``after`` is skipped. Returns None if
    none is found within ``years``.
    """
    t0 = rec.epoch if after is None else after
    t = t0 + np.arange(0.0, years * 365.25, SCAN_STEP_DAYS)
    d = earth_distance(rec, t, const)
    inside = d < threshold_au
    start = np.nonzero(inside[1:] & ~inside[:-1])[0]
    if len(start) == 0:
        return None
    k = start[0] + 1
    stop = k
    while stop < len(d) and inside[stop]:
        stop += 1
    j = k + int(np.argmin(d[k:stop]))
    lo, hi = t[max(j - 1, 0)], t[min(j + 1, len(t) - 1)]
    res = minimize_scalar(lambda x: float(earth_distance(rec, x, const)[0]), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-4})
    return float(res.x), float(res.fun)


_WINDOW_CACHE: dict = {}


def validity_window(rec: NeoRecord, const: Constants = DEFAULT) -> tuple[float, float]:
    """(start, end) MJD: element epoch to the next close approach (inf if none)."""
    key = (rec, const)
    if key not in _WINDOW_CACHE:
        ca = next_close_approach(rec, const=const)
        _WINDOW_CACHE[key] = (rec.epoch, math.inf if ca is None else ca[0])
    return _WINDOW_CACHE[key]


def neo_state_at(rec: NeoRecord, mjd: float, const: Constants = DEFAULT,
                 check_window: bool = True) -> np.ndarray:
    """Heliocentric ecliptic state [km, km/s] by two-body propagation.

    Warns with :class:`ValidityWarning` outside the validity window but still
    returns the state.
    """
    if check_window:
        lo, hi = validity_window(rec, const)
        if not lo <= mjd <= hi:
            warnings.warn(f"{rec.designation}: epoch {mjd:.3f} outside validity window "
                          f"[{lo:.3f}, {hi:.3f}]", ValidityWarning, stacklevel=2)
    M = rec.M0 + rec.mean_motion(const) * (mjd - rec.epoch)
    E = solve_kepler(M, rec.e, 1e-13)
    nu = 2.0 * math.atan2(math.sqrt(1 + rec.e) * math.sin(E / 2), math.sqrt(1 - rec.e) * math.cos(E / 2))
    return elements_to_state(rec.a * const.au, rec.e, rec.i, rec.raan, rec.argp, nu, const.mu_sun)


# --- ingestion -----------------------------------------------------------------

_ALIASES = {
    "designation": ("designation", "full_name", "pdes", "name", "object"),
    "a": ("a", "a_au"),
    "e": ("e",),
    "i": ("i", "i_deg", "incl"),
    "raan": ("raan", "raan_deg", "om", "node"),
    "argp": ("argp", "argp_deg", "w", "peri"),
    "M0": ("m0", "m0_deg", "ma", "m"),
    "epoch": ("epoch", "epoch_mjd", "epoch_cal", "epoch_jd"),
    "H": ("h",),
    "moid": ("moid", "moid_au"),
}
_MANDATORY = ("designation", "a", "e", "i", "raan", "argp", "M0", "epoch", "H")
NORMALIZED_COLUMNS = ("designation", "a_au", "e", "i_deg", "raan_deg", "argp_deg", "M0_deg",
                      "epoch", "H", "moid_au", "family", "sea_flag")


@dataclass
class Catalog:
    """Validated records plus (row number, designation, reason) for rejected rows."""

    records: list = field(default_factory=list)
    rejected: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, k):
        return self.records[k]

    def find(self, designation: str) -> NeoRecord:
        key = _norm_name(designation)
        for r in self.records:
            if _norm_name(r.designation) == key:
                return r
        raise KeyError(designation)

    def select(self, designations) -> "Catalog":
        return Catalog([self.find(d) for d in designations], [])


def _norm_name(s: str) -> str:
    s = s.strip().strip("()").strip()
    if "(" in s:
        # SBDB full_name: "  (2006 RH120)" or "433 Eros (A898 PA)"
        s = s[s.index("(") + 1:s.rindex(")")] if ")" in s else s
    return " ".join(s.split()).upper()


def _parse_epoch(text: str) -> float:
    text = text.strip()
    try:
        v = float(text)
    except ValueError:
        return mjd_from_iso(text)
    return v - _JD_MJD if v > 2.0e6 else v


def _column_map(header):
    low = [h.strip().lower() for h in header]
    cmap = {}
    for key, names in _ALIASES.items():
        for nm in names:
            if nm in low:
                cmap[key] = low.index(nm)
                break
    return cmap


def _looks_like_radians(rows) -> bool:
    # degrees data almost never has every node, perihelion and anomaly below 2 pi
    vals = [abs(v) for r in rows for v in (r["raan"], r["argp"], r["M0"])]
    return bool(vals) and max(vals) <= 2 * math.pi + 1e-9 and max(vals) > 0


def ingest_text(text: str, source: str = "<text>") -> Catalog:
    """Parse a CSV export (minimal schema or SBDB-style columns)."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        return Catalog()
    reader = csv.reader(io.StringIO("\n".join(lines)))
    header = next(reader)
    cmap = _column_map(header)
    missing = [k for k in _MANDATORY if k not in cmap]
    if missing:
        raise CatalogError(f"{source}: missing columns {missing} in header {header}")
    parsed, cat = [], Catalog()
    for rowno, row in enumerate(reader, start=2):
        name = row[cmap["designation"]].strip() if len(row) > cmap["designation"] else ""
        try:
            vals = {}
            for key in _MANDATORY[1:]:
                cell = row[cmap[key]].strip() if cmap[key] < len(row) else ""
                if cell == "":
                    raise ValueError(f"missing {key}")
                vals[key] = _parse_epoch(cell) if key == "epoch" else float(cell)
            moid = None
            if "moid" in cmap and cmap["moid"] < len(row) and row[cmap["moid"]].strip():
                moid = float(row[cmap["moid"]])
            if not name:
                raise ValueError("missing designation")
            for key in ("raan", "argp", "M0"):
                if not -360.0 <= vals[key] <= 360.0:
                    raise ValueError(f"{key}={vals[key]} outside +-360 deg")
            if not 0 <= vals["i"] <= 180:
                raise ValueError(f"i={vals['i']} outside [0, 180] deg")
            if not 0 <= vals["e"] < 1:
                raise ValueError(f"e={vals['e']} is not an elliptic orbit")
            if not vals["a"] > 0:
                raise ValueError(f"a={vals['a']} must be positive")
            parsed.append((rowno, name, vals, moid))
        except (ValueError, IndexError) as exc:
            cat.rejected.append((rowno, name, str(exc)))
    if _looks_like_radians([p[2] for p in parsed]):
        raise CatalogError(f"{source}: all angles lie within [0, 2 pi]; "
                           "they look like radians, degrees are required")
    for rowno, name, v, moid in parsed:
        try:
            cat.records.append(NeoRecord.from_degrees(_norm_name(name) if "(" in name else name.strip(),
                                                      v["a"], v["e"], v["i"], v["raan"], v["argp"],
                                                      v["M0"], v["epoch"], v["H"], moid))
        except ValueError as exc:
            cat.rejected.append((rowno, name, str(exc)))
    for rowno, name, reason in cat.rejected:
        log.warning("%s row %d (%s) rejected: %s", source, rowno, name, reason)
    return cat


def ingest(path) -> Catalog:
    path = Path(path)
    return ingest_text(path.read_text(encoding="utf-8"), str(path))


def _epoch_text(mjd: float) -> str:
    return iso_from_mjd(mjd, date_only=(mjd % 1.0 == 0.0))


def _g(x: float) -> str:
    # 15 digits survive the degree/radian round trip unchanged
    return f"{x:.15g}"


def catalog_rows(cat) -> list:
    rows = []
    for r in cat:
        rows.append([r.designation, repr(r.a), repr(r.e), _g(math.degrees(r.i)),
                     _g(math.degrees(r.raan)), _g(math.degrees(r.argp)),
                     _g(math.degrees(r.M0)), _epoch_text(r.epoch), repr(r.H),
                     "" if r.moid is None else repr(r.moid), r.family, str(int(r.sea_flag))])
    return rows


def write_catalog(cat, path) -> None:
    """Normalized catalog CSV (columns :data:`NORMALIZED_COLUMNS`, degrees, ISO epochs)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NORMALIZED_COLUMNS)
        w.writerows(catalog_rows(cat))


def reference_catalog() -> Catalog:
    """Bundled fixture of twelve known low-cost objects (reconstructed elements,
    see scripts/make_reference_catalog.py)."""
    from importlib.resources import files

    name = "reference_neos.csv"
    return ingest_text(files("erofinder.data").joinpath(name).read_text("utf-8"), name)
