"""Regenerate src/erofinder/data/reference_neos.csv.

Elements a, e, i, MOID and the diameter range are the published values for
the twelve objects; node and perihelion arguments are approximate catalogue
values. The mean anomaly at the element epoch is reconstructed by placing each
object at Earth's heliocentric longitude in the middle of its discovery
half-month (encoded in the provisional designation), where these small
objects were found during a close approach; 2006 RH120 is anchored at its
escape from temporary Earth capture instead. H is the mean of the magnitudes
inverted from the two ends of the diameter range.
"""
import argparse
import math
from datetime import date
from pathlib import Path

from scipy.optimize import brentq

from erofinder.constants import DEFAULT, mjd_from_iso
from erofinder.kepler import elements_to_state, mean_from_true
from erofinder.neo import NeoRecord, absolute_magnitude, write_catalog

EPOCH = "2012-09-30"
# designation, a, e, i, raan, argp, moid, d_min, d_max
OBJECTS = [
    ("2006 RH120", 1.033, 0.024, 0.595, 51.1, 10.1, 0.0171, 2.3, 7.4),
    ("2010 VQ98", 1.023, 0.027, 1.476, 41.8, 318.6, 0.0048, 4.3, 13.6),
    ("2007 UN12", 1.054, 0.060, 0.235, 216.1, 134.0, 0.0011, 3.4, 10.6),
    ("2010 UE51", 1.055, 0.060, 0.624, 32.3, 47.6, 0.0084, 4.1, 12.9),
    ("2008 EA9", 1.059, 0.080, 0.424, 348.1, 336.2, 0.0014, 5.6, 16.9),
    ("2011 UD21", 0.980, 0.030, 1.062, 20.6, 253.1, 0.0043, 3.8, 12.0),
    ("2009 BD", 1.062, 0.052, 1.267, 58.3, 316.6, 0.0053, 4.2, 13.4),
    ("2008 UA202", 1.033, 0.069, 0.264, 21.1, 300.9, 2.5e-4, 2.4, 7.7),
    # published row repeats the a/e of 2008 UA202; e is the approximate catalogue value
    ("2011 BL45", 1.033, 0.021, 3.049, 132.4, 191.3, 0.0040, 6.9, 22.0),
    ("2011 MD", 1.056, 0.037, 2.446, 271.6, 5.9, 0.0018, 4.6, 14.4),
    ("2000 SG344", 0.978, 0.067, 0.111, 192.0, 275.3, 8.3e-4, 20.7, 65.5),
    ("1991 VG", 1.027, 0.049, 1.445, 73.9, 24.5, 0.0037, 3.9, 12.5),
]
_HALF_MONTHS = "ABCDEFGHJKLMNOPQRSTUVWXY"
# temporarily Earth-bound at discovery; its heliocentric orbit starts at escape
ANCHOR_OVERRIDE = {"2006 RH120": "2007-07-15"}


def discovery_mjd(designation: str) -> float:
    """Middle of the half-month encoded by the designation's first letter."""
    year, code = designation.split()
    k = _HALF_MONTHS.index(code[0])
    month, second = k // 2 + 1, k % 2
    start = date(int(year), month, 1 if not second else 16)
    if second:
        nxt = date(int(year) + (month == 12), month % 12 + 1, 1)
        days = (nxt - start).days
    else:
        days = 15
    return mjd_from_iso(start.isoformat()) + days / 2.0


def anchor_mjd(designation: str) -> float:
    if designation in ANCHOR_OVERRIDE:
        return mjd_from_iso(ANCHOR_OVERRIDE[designation])
    return discovery_mjd(designation)


def anchored_mean_anomaly(a, e, i, raan, argp, t_anchor, t_epoch, const=DEFAULT):
    """Mean anomaly at ``t_epoch`` such that the object sits at Earth's
    longitude at ``t_anchor``."""
    lam_earth = const.earth_longitude(t_anchor)

    def lon_gap(nu):
        r = elements_to_state(a, e, i, raan, argp, nu, 1.0)[:3]
        d = math.atan2(r[1], r[0]) - lam_earth
        return math.atan2(math.sin(d), math.cos(d))

    guess = (lam_earth - raan - argp) % (2 * math.pi)
    nu = brentq(lon_gap, guess - 0.5, guess + 0.5, xtol=1e-14)
    M_anchor = mean_from_true(nu, e)
    n = 2 * math.pi / (2 * math.pi * math.sqrt((a * const.au) ** 3 / const.mu_sun) / 86400.0)
    return (M_anchor + n * (t_epoch - t_anchor)) % (2 * math.pi)


def build_records():
    t_epoch = mjd_from_iso(EPOCH)
    recs = []
    for name, a, e, i, raan, argp, moid, dmin, dmax in OBJECTS:
        H = 0.5 * (absolute_magnitude(dmin, 0.50) + absolute_magnitude(dmax, 0.05))
        M0 = anchored_mean_anomaly(a, e, math.radians(i), math.radians(raan), math.radians(argp),
                                   anchor_mjd(name), t_epoch)
        recs.append(NeoRecord.from_degrees(name, a, e, i, raan, argp, math.degrees(M0),
                                           t_epoch, round(H, 3), moid))
    return recs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path,
                    default=Path(__file__).resolve().parents[1] / "src/erofinder/data/reference_neos.csv")
    args = ap.parse_args()
    recs = build_records()
    write_catalog(recs, args.out)
    print(f"wrote {len(recs)} records to {args.out}")


if __name__ == "__main__":
    main()
