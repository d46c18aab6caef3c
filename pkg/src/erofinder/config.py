"""Run configuration: one JSON document that fixes every tunable of a run."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from erofinder.constants import DEFAULT, Constants, mjd_from_iso

CONFIG_SCHEMA = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FamilyConfig:
    """Continuation settings shared by the six families."""

    planar_members: int = 100
    vertical_members: int = 100
    halo_members: int = 100
    j_min: float = 3.0000030032  # planar / vertical stop
    j_max: float = 3.0007982727  # planar / vertical start
    halo_j_stop: float = 3.00028
    tol: float = 1e-12


@dataclass(frozen=True)
class ManifoldConfig:
    phases: int = 200
    epsilon: float = 1e-6
    t_max: float = 40.0
    tol: float = 1e-12


@dataclass(frozen=True)
class SearchConfig:
    popsize: int = 40
    generations: int = 300
    restarts: int = 8
    refine_top: int = 7  # cases refined on the exact model
    duration_tie_ms: float = 10.0  # dv margin traded for a shorter mission
    max_upstream_days: float = 1000.0
    local_upstream_days: float = 3650.0
    rev_tof_days: tuple = (300.0, 420.0)


@dataclass(frozen=True)
class RunConfig:
    constants: dict = field(default_factory=dict)  # overrides of Constants fields
    families: FamilyConfig = FamilyConfig()
    manifolds: ManifoldConfig = ManifoldConfig()
    search: SearchConfig = SearchConfig()
    filter_threshold: float = 1.0  # km/s
    ero_threshold: float = 500.0  # m/s
    window: tuple = ("2016-01-01", "2100-12-31")
    isp: tuple = (300.0, 3000.0)
    dry_mass: float = 2442.0
    wet_mass: float = 5574.0
    targets: tuple = ("1P", "1V", "1Hn", "1Hs", "2P", "2V", "2Hn", "2Hs")
    seed: int = 0
    workers: int = 1
    cache_dir: str = "cache"

    def __post_init__(self):
        if self.filter_threshold <= 0 or self.ero_threshold <= 0:
            raise ConfigError("thresholds must be positive")
        try:
            lo, hi = (mjd_from_iso(w) if isinstance(w, str) else float(w) for w in self.window)
        except ValueError as exc:
            raise ConfigError(f"bad window {self.window!r}: {exc}") from None
        if not lo < hi:
            raise ConfigError("window start must precede its end")
        if self.wet_mass <= self.dry_mass or self.dry_mass <= 0:
            raise ConfigError("need 0 < dry_mass < wet_mass")
        if not self.isp or min(self.isp) <= 0:
            raise ConfigError("isp list must be non-empty and positive")
        if self.search.duration_tie_ms < 0 or self.search.refine_top < 1:
            raise ConfigError("need duration_tie_ms >= 0 and refine_top >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        unknown = set(self.constants) - {f.name for f in fields(Constants)}
        if unknown:
            raise ConfigError(f"unknown constants override(s): {sorted(unknown)}")

    @property
    def const(self) -> Constants:
        return DEFAULT.with_overrides(**self.constants) if self.constants else DEFAULT

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = CONFIG_SCHEMA
        return json.loads(json.dumps(d))  # tuples -> lists

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        schema = d.pop("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ConfigError(f"config schema {schema} != {CONFIG_SCHEMA}")
        nested = {"families": FamilyConfig, "manifolds": ManifoldConfig, "search": SearchConfig}
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config key(s): {sorted(extra)}")
        kw = {}
        for k, v in d.items():
            if k in nested:
                sub = nested[k]
                bad = set(v) - {f.name for f in fields(sub)}
                if bad:
                    raise ConfigError(f"unknown {k} key(s): {sorted(bad)}")
                v = sub(**{kk: tuple(vv) if isinstance(vv, list) else vv for kk, vv in v.items()})
            elif isinstance(v, list):
                v = tuple(v)
            kw[k] = v
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
