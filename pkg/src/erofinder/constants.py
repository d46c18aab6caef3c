"""Physical constants and unit conversions for the Sun-Earth CR3BP.

Nondimensional units: length = 1 AU, time = T_earth / (2 pi), so the primaries
rotate at unit angular rate and G (M_sun + M_earth) = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone

MU_SUN_EARTH = 3.0032080443e-6
MU_SUN = 1.32712440018e11  # km^3/s^2
AU_KM = 149597870.7
G0 = 9.80665  # m/s^2
DAY_S = 86400.0
MJD_J2000 = 51544.5
# Mean longitude of the Earth-Moon barycentre at J2000 (ecliptic J2000), deg.
EARTH_LONGITUDE_J2000_DEG = 100.46457166

_MJD_EPOCH = datetime(1858, 11, 17, tzinfo=timezone.utc)


@dataclass(frozen=True)
class Constants:
    """Model constants. ``mu`` excludes the Moon's mass."""

    mu: float = MU_SUN_EARTH
    mu_sun: float = MU_SUN
    au: float = AU_KM
    earth_longitude_j2000: float = math.radians(EARTH_LONGITUDE_J2000_DEG)
    g0: float = G0

    def __post_init__(self):
        if not 0.0 < self.mu < 0.5:
            raise ValueError(f"mass ratio must be in (0, 0.5), got {self.mu}")

    @property
    def gm_total(self) -> float:
        """G (M_sun + M_earth) in km^3/s^2."""
        return self.mu_sun / (1.0 - self.mu)

    @property
    def t_earth(self) -> float:
        """Sidereal period of the circular Earth orbit, seconds."""
        return 2.0 * math.pi * math.sqrt(self.au**3 / self.gm_total)

    @property
    def time_unit(self) -> float:
        """Seconds per nondimensional time unit."""
        return self.t_earth / (2.0 * math.pi)

    @property
    def velocity_unit(self) -> float:
        """km/s per nondimensional velocity unit."""
        return self.au / self.time_unit

    def with_overrides(self, **kw) -> "Constants":
        return replace(self, **kw)

    # unit helpers -----------------------------------------------------
    def days_to_nd(self, days):
        return days * DAY_S / self.time_unit

    def nd_to_days(self, t):
        return t * self.time_unit / DAY_S

    def earth_longitude(self, mjd):
        """Heliocentric longitude of the circular Earth at ``mjd`` (rad)."""
        return self.earth_longitude_j2000 + (mjd - MJD_J2000) * DAY_S / self.time_unit


DEFAULT = Constants()


def mjd_from_datetime(dt: datetime) -> float:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return (dt - _MJD_EPOCH).total_seconds() / DAY_S


def datetime_from_mjd(mjd: float) -> datetime:
    return _MJD_EPOCH + timedelta(days=float(mjd))


def mjd_from_iso(text: str) -> float:
    """Parse an ISO-8601 date or datetime (UTC assumed) into MJD."""
    text = text.strip().replace("Z", "+00:00")
    return mjd_from_datetime(datetime.fromisoformat(text))


def iso_from_mjd(mjd: float, date_only: bool = True) -> str:
    dt = datetime_from_mjd(mjd)
    if date_only:
        return dt.date().isoformat()
    return dt.strftime("%Y-%m-%dT%H:%M:%S")


def mjd_from_year(year: float) -> float:
    """MJD of a decimal Julian year (J2000 based)."""
    return MJD_J2000 + (year - 2000.0) * 365.25


def year_from_mjd(mjd: float) -> float:
    return 2000.0 + (mjd - MJD_J2000) / 365.25
