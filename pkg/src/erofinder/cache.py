"""Checksummed on-disk caches for orbit families and manifold sets.

Each artifact ``<name>.<ext>`` has a sidecar ``<name>.meta.json`` holding the
hash of the parameters that produced it and the SHA-256 of the file. A
lookup hits only when both match; anything else triggers regeneration.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from pathlib import Path

from erofinder.config import RunConfig
from erofinder.lpo import OrbitFamily, build_family
from erofinder.manifolds import DEFAULT_BRANCH, ManifoldSet, globalize_family

log = logging.getLogger(__name__)

CACHE_SCHEMA = 1
FAMILY_LABELS = ("1P", "1V", "1H", "2P", "2V", "2H")  # halos stored north, south mirrored
TARGET_LABELS = ("1P", "1V", "1Hn", "1Hs", "2P", "2V", "2Hn", "2Hs")
_KINDS = {"P": "planar", "V": "vertical", "H": "halo-north"}


class CacheError(RuntimeError):
    pass


def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def params_digest(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class Cache:
    def __init__(self, root):
        self.root = Path(root)

    def _paths(self, name: str, ext: str):
        return self.root / f"{name}.{ext}", self.root / f"{name}.meta.json"

    def lookup(self, name: str, ext: str, params: dict):
        """Path of a valid artifact for ``params`` or None."""
        path, meta_path = self._paths(name, ext)
        if not (path.exists() and meta_path.exists()):
            return None
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError:
            log.warning("cache %s: unreadable metadata, regenerating", name)
            return None
        if meta.get("schema") != CACHE_SCHEMA or meta.get("params") != params_digest(params):
            log.info("cache %s: parameters changed, regenerating", name)
            return None
        if meta.get("sha256") != file_digest(path):
            log.warning("cache %s: checksum mismatch, regenerating", name)
            return None
        return path

    def store(self, name: str, ext: str, params: dict, write) -> Path:
        """Write via ``write(tmp_path)`` then publish file and metadata atomically."""
        self.root.mkdir(parents=True, exist_ok=True)
        path, meta_path = self._paths(name, ext)
        tmp = path.with_name(path.name + ".tmp")
        write(tmp)
        os.replace(tmp, path)
        meta = dict(schema=CACHE_SCHEMA, params=params_digest(params), sha256=file_digest(path),
                    parameters=params)
        tmp_meta = meta_path.with_name(meta_path.name + ".tmp")
        tmp_meta.write_text(json.dumps(meta, sort_keys=True, indent=2, default=str) + "\n")
        os.replace(tmp_meta, meta_path)
        return path

    def digest(self, name: str, ext: str) -> str:
        path, _ = self._paths(name, ext)
        return file_digest(path) if path.exists() else ""


def family_params(label: str, cfg: RunConfig) -> dict:
    f = cfg.families
    kind = _KINDS[label[1]]
    if kind == "halo-north":
        rng, n = (f.halo_j_stop, None), f.halo_members
    else:
        rng = (f.j_min, f.j_max)
        n = f.planar_members if kind == "planar" else f.vertical_members
    return dict(point=f"L{label[0]}", kind=kind, j_range=rng, n_members=n, tol=f.tol,
                mu=cfg.const.mu)


def ensure_families(cfg: RunConfig, labels=FAMILY_LABELS, cache: Cache | None = None):
    """{label: OrbitFamily} for the stored families, building missing ones.
    Returns (families, built) where ``built`` lists regenerated labels."""
    cache = cache or Cache(Path(cfg.cache_dir) / "families")
    out, built = {}, []
    for label in labels:
        p = family_params(label, cfg)
        path = cache.lookup(label, "csv", p)
        if path is None:
            t0 = time.perf_counter()
            try:
                fam = build_family(p["point"], p["kind"], p["j_range"][0], p["j_range"][1],
                                   n_members=p["n_members"], mu=p["mu"], tol=p["tol"])
            except Exception as exc:
                raise CacheError(f"family {label}: continuation failed: {exc}") from exc
            path = cache.store(label, "csv", p, fam.to_csv)
            built.append(label)
            log.info("family %s: %d members in %.1f s", label, len(fam), time.perf_counter() - t0)
        out[label] = OrbitFamily.from_csv(path)
    return out, built


def target_family(families: dict, target: str) -> OrbitFamily:
    fam = families[target[:2]]
    return fam.mirrored() if target.endswith("s") else fam


def manifold_params(target: str, cfg: RunConfig, family_hash: str) -> dict:
    m = cfg.manifolds
    return dict(target=target, family_hash=family_hash, phases=m.phases, epsilon=m.epsilon,
                t_max=m.t_max, tol=m.tol, branch=DEFAULT_BRANCH[f"L{target[0]}"],
                constants=cfg.const.__dict__)


def ensure_manifolds(cfg: RunConfig, families: dict, targets=TARGET_LABELS,
                     family_cache: Cache | None = None, cache: Cache | None = None):
    """{target: (OrbitFamily, ManifoldSet)}; returns (sets, built)."""
    family_cache = family_cache or Cache(Path(cfg.cache_dir) / "families")
    cache = cache or Cache(Path(cfg.cache_dir) / "manifolds")
    m = cfg.manifolds
    out, built = {}, []
    for target in targets:
        fam = target_family(families, target)
        fh = family_cache.digest(target[:2], "csv")
        p = manifold_params(target, cfg, fh)
        path = cache.lookup(target, "npz", p)
        if path is None:
            t0 = time.perf_counter()
            ms = globalize_family(fam, n_points=m.phases, epsilon=m.epsilon, t_max=m.t_max,
                                  tol=m.tol, const=cfg.const, family_hash=fh)
            path = cache.store(target, "npz", p, ms.save)
            built.append(target)
            log.info("manifold %s: %d trajectories (%.0f%% reach the section) in %.1f s", target,
                     len(ms), 100 * ms.reached.mean(), time.perf_counter() - t0)
        out[target] = (fam, ManifoldSet.load(path))
    return out, built
