"""Batch command-line front end.

Every CSV output starts with ``#`` provenance lines (tool version, config
hash, cache hashes, the config itself) and contains no timestamps, so equal
inputs give byte-identical files. Timings go to stderr and to
``run_manifest.json`` in the run directory.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from erofinder import __version__
from erofinder.cache import FAMILY_LABELS, TARGET_LABELS, Cache, ensure_families, ensure_manifolds
from erofinder.capture import (
    CaptureError,
    SearchSettings,
    TargetManifold,
    optimize_transfer,
    select_solution,
    rank_eros,
    replay,
    with_isp,
)
from erofinder.config import ConfigError, RunConfig
from erofinder.constants import iso_from_mjd
from erofinder.manifolds import element_envelope, section_phase_projection
from erofinder.neo import (
    AMOR_LIMIT,
    EARTH_APHELION,
    EARTH_PERIHELION,
    NORMALIZED_COLUMNS,
    CatalogError,
    catalog_rows,
    ingest,
)
from erofinder.prune import (
    bands_from_sets,
    biimpulsive_estimate,
    capturable_region,
    inclination_only_cost,
    prune_catalog,
)

log = logging.getLogger("erofinder")

FIGURES = ("fig3", "fig5", "fig6", "fig7", "fig8", "fig9")
SOLUTION_COLUMNS = (
    "designation", "target", "case", "dv_dep_ms", "dv_ins_ms", "dv_total_ms", "departure",
    "insertion", "arrival", "duration_yr", "t_ins_mjd", "jacobi", "sigma", "tau_m", "tau_l_days",
    "replay_km", "replay_ms", "replay_ok", "constraint_ok",
)


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


# --- run context ---------------------------------------------------------------------

class Run:
    """Shared state of one invocation: config, output dir, provenance, manifest."""

    def __init__(self, cfg: RunConfig, out_dir: Path, command: str):
        self.cfg = cfg
        self.out = out_dir
        self.command = command
        self.cache_hashes: dict = {}
        self.stages: list = []
        self.outputs: list = []
        self.counts: dict = {}
        self._families = None
        self._sets = None

    # provenance --------------------------------------------------------------------
    def header(self) -> list:
        caches = " ".join(f"{k}={v[:16]}" for k, v in sorted(self.cache_hashes.items()))
        return [f"# erofinder {__version__}", f"# config_sha256 {self.cfg.digest()}",
                f"# caches {caches or '-'}",
                f"# config {json.dumps(self.cfg.to_dict(), sort_keys=True, separators=(',', ':'))}"]

    def write_csv(self, name: str, columns, rows) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        for line in self.header():
            buf.write(line + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
        path = self.out / name
        path.write_text(buf.getvalue(), encoding="utf-8")
        self.outputs.append(name)
        return path

    def write_text(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text("\n".join(self.header()) + "\n\n" + text, encoding="utf-8")
        self.outputs.append(name)
        return path

    def stage(self, name: str):
        return _Stage(self, name)

    def manifest(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        m = dict(tool="erofinder", version=__version__, command=self.command,
                 config_sha256=self.cfg.digest(), config=self.cfg.to_dict(),
                 caches=self.cache_hashes, stages=self.stages, counts=self.counts,
                 outputs=sorted(set(self.outputs)))
        path = self.out / "run_manifest.json"
        path.write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")
        return path

    # caches -------------------------------------------------------------------------
    def families(self):
        if self._families is None:
            with self.stage("families"):
                fc = Cache(Path(self.cfg.cache_dir) / "families")
                fams, built = ensure_families(self.cfg, cache=fc)
                for k in FAMILY_LABELS:
                    self.cache_hashes[f"family:{k}"] = fc.digest(k, "csv")
                self.counts["families_built"] = len(built)
                self._families = fams
        return self._families

    def manifold_sets(self, targets=None):
        targets = tuple(targets or self.cfg.targets)
        fams = self.families()
        if self._sets is None:
            self._sets = {}
        missing = [t for t in targets if t not in self._sets]
        if missing:
            with self.stage("manifolds"):
                mc = Cache(Path(self.cfg.cache_dir) / "manifolds")
                sets, built = ensure_manifolds(self.cfg, fams, missing, cache=mc)
                for k in missing:
                    self.cache_hashes[f"manifold:{k}"] = mc.digest(k, "npz")
                self.counts["manifolds_built"] = self.counts.get("manifolds_built", 0) + len(built)
                self._sets.update(sets)
        return {t: self._sets[t] for t in targets}

    def bands(self):
        """Filter bands per point: P, V, H (halo north and south share one band)."""
        labels = sorted({t[:2] for t in self.cfg.targets})
        need = [lbl + "n" if lbl[1] == "H" else lbl for lbl in labels]
        return bands_from_sets(self.manifold_sets(need))


class _Stage:
    def __init__(self, run: Run, name: str):
        self.run, self.name = run, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s: start", self.name)
        return self

    def __exit__(self, et, exc, tb):
        dt = time.perf_counter() - self.t0
        self.run.stages.append(dict(stage=self.name, seconds=round(dt, 3), ok=exc is None))
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        log.info("stage %s: %.2f s", self.name, dt)
        return False


# --- helpers -------------------------------------------------------------------------

def _f(x, digits=10):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return f"{x:.{digits}g}"


def _date(mjd):
    return iso_from_mjd(mjd, date_only=True)


def _load_catalog(run: Run, path):
    with run.stage("ingest"):
        cat = ingest(path)
    run.counts["catalog_records"] = len(cat)
    run.counts["catalog_rejected"] = len(cat.rejected)
    log.info("ingest: %d records, %d rejected", len(cat), len(cat.rejected))
    return cat


def _prune(run: Run, cat, threshold=None):
    threshold = run.cfg.filter_threshold if threshold is None else threshold
    bands = run.bands()
    with run.stage("prune"):
        res = prune_catalog(cat, bands, threshold)
    run.counts["pruned_survivors"] = len(res)
    log.info("prune: %d of %d below %.3f km/s", len(res), len(cat), threshold)
    return res, bands


def _prune_rows(results):
    rows = []
    for r in results:
        for e in sorted(r.estimates, key=lambda e: (e.dv_total, e.target)):
            rows.append([r.designation, e.target, _f(e.dv_total * 1e3, 8), e.case,
                         _f(e.band_point[0], 8), _f(e.band_point[1], 8), _f(e.band_point[2], 8),
                         int(e.clamped), int(e is r.best)])
    return rows


def _settings(cfg: RunConfig) -> SearchSettings:
    s = cfg.search
    return SearchSettings(popsize=s.popsize, generations=s.generations, restarts=s.restarts,
                          seed=cfg.seed, max_upstream_days=s.max_upstream_days,
                          local_upstream_days=s.local_upstream_days,
                          rev_tof_days=tuple(s.rev_tof_days), isp=cfg.isp[0])


def _targets_for(estimates, threshold, allowed):
    out = []
    for e in estimates:
        if e.dv_total > threshold:
            continue
        if e.target.endswith("H"):
            out += [e.target + "n", e.target + "s"]
        else:
            out.append(e.target)
    return [t for t in out if t in allowed]


def _optimize_job(args):
    neo, target_label, fam, ms, cfg = args
    tgt = TargetManifold.from_set(fam, ms, tol=cfg.manifolds.tol)
    try:
        sols = optimize_transfer(neo, tgt, cfg.window, _settings(cfg), cfg.search.refine_top,
                                 const=cfg.const, wet=cfg.wet_mass, dry=cfg.dry_mass)
    except CaptureError as exc:
        log.info("%s -> %s: %s", neo.designation, target_label, exc)
        return neo.designation, target_label, None, None
    best = select_solution(sols, cfg.search.duration_tie_ms)
    return neo.designation, target_label, best, replay(best, neo, tgt, cfg.const)


def _optimize(run: Run, pairs):
    """pairs: [(NeoRecord, target label)] -> [(solution, replay report)] sorted."""
    sets = run.manifold_sets(sorted({t for _, t in pairs}))
    jobs = [(neo, t, sets[t][0], sets[t][1], run.cfg) for neo, t in pairs]
    with run.stage("optimize"):
        if run.cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=run.cfg.workers) as pool:
                results = list(pool.map(_optimize_job, jobs))
        else:
            results = [_optimize_job(j) for j in jobs]
    out = [(s, rp) for _, _, s, rp in results if s is not None]
    out.sort(key=lambda p: (p[0].designation, p[0].target))
    run.counts["optimized_pairs"] = len(jobs)
    run.counts["solutions"] = len(out)
    bad = [s for s, rp in out if not rp.ok()]
    run.counts["replay_failures"] = len(bad)
    for s in bad:
        log.warning("replay closure above tolerance for %s -> %s", s.designation, s.target)
    return out


def _solution_rows(pairs):
    rows = []
    for s, rp in pairs:
        x = s.decision
        rows.append([s.designation, s.target, x.case, _f(s.dv_dep, 8), _f(s.dv_ins, 8),
                     _f(s.dv_total, 8), _date(s.departure), _date(s.insertion), _date(s.arrival),
                     _f(s.duration_years, 6), _f(x.t_ins, 12), _f(x.jacobi, 14), _f(x.sigma, 10),
                     _f(x.tau_m, 10), _f(x.tau_l, 10), _f(rp.max_position_km, 3),
                     _f(rp.max_velocity_ms, 3), int(rp.ok()), int(s.constraint_ok)])
    return rows


def read_solutions(path):
    """(designation, target, dv_total m/s) triples from a solutions CSV."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        out.append((row["designation"], row["target"], float(row["dv_total_ms"])))
    return out


def _rank_rows(entries):
    return [[e.rank, e.designation, _f(e.best_dv, 8), len(e.targets),
             " ".join(f"{t}:{dv:.0f}" for t, dv in e.targets)] for e in entries]


def _rank_report(entries, pairs, cfg: RunConfig, catalog=None):
    recs = {r.designation: r for r in catalog} if catalog is not None else {}
    lines = [f"Easily retrievable objects (dv < {cfg.ero_threshold:g} m/s): {len(entries)}", ""]
    lines.append(f"{'#':>3}  {'designation':<14}{'a':>7}{'e':>7}{'i':>7}  targets (m/s)")
    for e in entries:
        r = recs.get(e.designation)
        el = (f"{r.a:7.3f}{r.e:7.3f}{math.degrees(r.i):7.3f}" if r else " " * 21)
        tg = ", ".join(f"{t} {dv:.0f}" for t, dv in e.targets)
        lines.append(f"{e.rank:>3}  {e.designation:<14}{el}  {tg}")
    if pairs:
        best = {}
        for s, _ in pairs:
            if s.designation not in best or s.dv_total < best[s.designation].dv_total:
                best[s.designation] = s
        lines += ["", "Best transfer per object", ""]
        hdr = (f"{'designation':<14}{'target':>7}{'dv':>7}{'dv_ins':>8}  {'departure':<11}"
               f"{'insertion':<11}{'arrival':<11}{'yr':>6}")
        for isp in cfg.isp:
            hdr += f"{f'm[t]@{isp:g}s':>14}{'D[m]':>7}"
        lines.append(hdr)
        names = [e.designation for e in entries] or sorted(best)
        for name in names:
            if name not in best:
                continue
            s = best[name]
            ln = (f"{s.designation:<14}{s.target:>7}{s.dv_total:7.0f}{s.dv_ins:8.0f}  "
                  f"{_date(s.departure):<11}{_date(s.insertion):<11}{_date(s.arrival):<11}"
                  f"{s.duration_years:6.2f}")
            for isp in cfg.isp:
                m = with_isp(s, isp, cfg.wet_mass, cfg.dry_mass, cfg.const)
                ln += f"{m.mass_t:14.1f}{m.diameter_m:7.2f}"
            lines.append(ln)
    l1 = sum(1 for s, _ in pairs if s.target[0] == "1" and s.dv_total < cfg.ero_threshold)
    l2 = sum(1 for s, _ in pairs if s.target[0] == "2" and s.dv_total < cfg.ero_threshold)
    lines += ["", f"Qualifying trajectories: {l2} to L2 orbits, {l1} to L1 orbits"]
    return "\n".join(lines) + "\n"


# --- commands ------------------------------------------------------------------------

def cmd_families(run: Run, args):
    fams = run.families()
    rows = [[k, f.label, f.kind, f.point, len(f), _f(f.jacobi_range[0], 12),
             _f(f.jacobi_range[1], 12)] for k, f in sorted(fams.items())]
    run.write_csv("families.csv", ["name", "label", "kind", "point", "members", "j_min", "j_max"],
                  rows)


def cmd_manifolds(run: Run, args):
    sets = run.manifold_sets(args.targets or None)
    rows = [[t, len(ms), int(ms.reached.sum()), _f(float(np.nanmax(ms.transfer_time)), 8)]
            for t, (_, ms) in sorted(sets.items())]
    run.write_csv("manifolds.csv", ["target", "trajectories", "reached", "max_transfer_time"],
                  rows)


def cmd_ingest(run: Run, args):
    cat = _load_catalog(run, args.catalog)
    run.write_csv("catalog.csv", NORMALIZED_COLUMNS, catalog_rows(cat))
    if cat.rejected:
        run.write_csv("rejected.csv", ["row", "designation", "reason"], cat.rejected)


def cmd_prune(run: Run, args):
    cat = _load_catalog(run, args.catalog)
    res, _ = _prune(run, cat, args.threshold)
    run.write_csv("filter_estimates.csv",
                  ["designation", "band", "dv_ms", "case", "rp_au", "ra_au", "i_deg", "clamped",
                   "best"], _prune_rows(res))


def _selected(cat, names):
    if not names:
        return list(cat)
    out = []
    for n in names:
        try:
            out.append(cat.find(n))
        except KeyError:
            raise StageError("select", KeyError(f"{n!r} not in catalog")) from None
    return out


def cmd_optimize(run: Run, args):
    cat = _load_catalog(run, args.catalog)
    neos = _selected(cat, args.neo)
    targets = args.targets or list(run.cfg.targets)
    pairs = [(n, t) for n in neos for t in targets]
    sols = _optimize(run, pairs)
    run.write_csv("solutions.csv", SOLUTION_COLUMNS, _solution_rows(sols))
    entries = rank_eros([s for s, _ in sols], run.cfg.ero_threshold)
    run.write_csv("eros.csv", ["rank", "designation", "best_dv_ms", "n_targets", "targets"],
                  _rank_rows(entries))
    run.write_text("report.txt", _rank_report(entries, sols, run.cfg, cat))


def cmd_rank(run: Run, args):
    with run.stage("rank"):
        sols = read_solutions(args.solutions)
        entries = rank_eros(sols, run.cfg.ero_threshold)
    run.counts["eros"] = len(entries)
    run.write_csv("eros.csv", ["rank", "designation", "best_dv_ms", "n_targets", "targets"],
                  _rank_rows(entries))


def cmd_pipeline(run: Run, args):
    cat = _load_catalog(run, args.catalog)
    run.write_csv("catalog.csv", NORMALIZED_COLUMNS, catalog_rows(cat))
    res, _ = _prune(run, cat)
    run.write_csv("filter_estimates.csv",
                  ["designation", "band", "dv_ms", "case", "rp_au", "ra_au", "i_deg", "clamped",
                   "best"], _prune_rows(res))
    by_name = {r.designation: r for r in cat}
    pairs = [(by_name[r.designation], t) for r in res
             for t in _targets_for(r.estimates, run.cfg.filter_threshold, run.cfg.targets)]
    sols = _optimize(run, pairs) if pairs else []
    run.write_csv("solutions.csv", SOLUTION_COLUMNS, _solution_rows(sols))
    with run.stage("rank"):
        entries = rank_eros([s for s, _ in sols], run.cfg.ero_threshold)
    run.counts["eros"] = len(entries)
    run.write_csv("eros.csv", ["rank", "designation", "best_dv_ms", "n_targets", "targets"],
                  _rank_rows(entries))
    run.write_text("report.txt", _rank_report(entries, sols, run.cfg, cat))
    log.info("pipeline: %d EROs", len(entries))


def _plot_fig3(run: Run, args):
    from erofinder.cr3bp.dynamics import propagate
    rows = []
    for name, fam in sorted(run.families().items()):
        for label, f in ((name if name[1] != "H" else name + "n", fam),) + (
                ((name + "s", fam.mirrored()),) if name[1] == "H" else ()):
            step = max(1, len(f) // args.members)
            for k in range(0, len(f), step):
                m = f[k]
                tr = propagate(m.state, m.period, n_samples=args.samples, mu=m.mu)
                for t, s in zip(tr.t, tr.states):
                    rows.append([label, k, _f(m.jacobi, 12), _f(t, 8), _f(s[0], 10), _f(s[1], 10),
                                 _f(s[2], 10)])
    run.write_csv("fig3_orbits.csv", ["family", "member", "jacobi", "t", "x", "y", "z"], rows)


def _plot_fig5(run: Run, args):
    rows = []
    for t, (fam, ms) in sorted(run.manifold_sets().items()):
        k = int(np.argmin(np.abs(ms.jacobi - args.jacobi)))
        member = ms.member[k]
        sel = ms.select((ms.member == member) & ms.reached)
        rr = section_phase_projection(sel, run.cfg.const)
        for ph, (r, rd) in zip(sel.phase, rr):
            rows.append([t, _f(float(sel.jacobi[0]), 12), _f(ph, 6), _f(r, 10), _f(rd, 10)])
    run.write_csv("fig5_section_loops.csv", ["target", "jacobi", "phase", "r_au", "rdot_kms"],
                  rows)


def _plot_fig6(run: Run, args):
    rows = []
    for t, (fam, ms) in sorted(run.manifold_sets().items()):
        if t.endswith("s"):
            continue  # identical to the north family
        env = element_envelope(ms)
        for r in env.to_rows():
            rows.append([t.rstrip("n")] + [_f(float(v), 10) for v in r])
    run.write_csv("fig6_envelopes.csv", ["family", "jacobi", "rp_min", "rp_max", "ra_min",
                                          "ra_max", "i_min_deg", "i_max_deg"], rows)


def _region_rows(run: Run, points, thr):
    out = []
    for b in run.bands():
        if b.point not in points:
            continue
        g = capturable_region(b, thr)
        out.append((b, g))
    return out


def _plot_fig7(run: Run, args):
    thr = args.threshold / 1e3
    rows, proj = [], []
    for b, g in _region_rows(run, ("L2",), thr):
        ia, ie, ii = np.nonzero(g.dv <= thr)
        for a, e, i in zip(ia, ie, ii):
            rows.append([b.label, _f(g.a[a], 6), _f(g.e[e], 6), _f(g.i_deg[i], 6),
                         _f(g.dv[a, e, i] * 1e3, 6)])
        for name, p, xs, ys in (("a-i", g.projection_ai(), g.a, g.i_deg),
                                ("e-i", g.projection_ei(), g.e, g.i_deg)):
            for x in range(len(xs)):
                for y in range(len(ys)):
                    proj.append([b.label, name, _f(xs[x], 6), _f(ys[y], 6), _f(p[x, y] * 1e3, 6)])
    run.write_csv("fig7_region.csv", ["band", "a_au", "e", "i_deg", "dv_ms"], rows)
    run.write_csv("fig7_projections.csv", ["band", "plane", "x", "y", "min_dv_ms"], proj)


def _plot_fig8(run: Run, args):
    thr = args.threshold / 1e3
    rows = []
    for b, g in _region_rows(run, ("L1", "L2"), thr):
        p = g.projection_ae()
        for x in range(len(g.a)):
            for y in range(len(g.e)):
                rows.append([b.point, b.label, _f(g.a[x], 6), _f(g.e[y], 6), _f(p[x, y] * 1e3, 6)])
    run.write_csv("fig8_region_ae.csv", ["point", "band", "a_au", "e", "min_dv_ms"], rows)
    # class boundaries in (a, e): q = a (1 - e), Q = a (1 + e)
    a = np.linspace(0.8, 1.3, 101)
    bnd = []
    for name, e in (("apollo-amor q=1.017", 1 - EARTH_PERIHELION / a),
                    ("aten-atira Q=0.983", EARTH_APHELION / a - 1),
                    ("amor q=1.3", 1 - AMOR_LIMIT / a)):
        for x, y in zip(a, e):
            if 0 <= y <= 0.3:
                bnd.append([name, _f(x, 6), _f(y, 8)])
    bnd += [["a=1", "1", "0"], ["a=1", "1", "0.3"]]
    run.write_csv("fig8_boundaries.csv", ["curve", "a_au", "e"], bnd)


def _plot_fig9(run: Run, args):
    if not args.catalog or not args.solutions:
        raise StageError("plotdata", ValueError("fig9 needs --catalog and --solutions"))
    cat = _load_catalog(run, args.catalog)
    bands = {b.label: b for b in run.bands()}
    rows = []
    for name, target, dv in read_solutions(args.solutions):
        band = bands.get(target[:2])
        try:
            rec = cat.find(name)
        except KeyError:
            continue
        if band is None:
            continue
        est = biimpulsive_estimate(rec, band)
        rows.append([name, target, _f(math.degrees(rec.i), 8), _f(est.dv_total * 1e3, 8),
                     _f(dv, 8)])
    run.write_csv("fig9_filter_vs_optimum.csv",
                  ["designation", "target", "i_deg", "filter_ms", "optimized_ms"], rows)
    ii = np.linspace(0.0, 5.0, 51)
    run.write_csv("fig9_inclination_only.csv", ["i_deg", "dv_ms"],
                  [[_f(i, 6), _f(v * 1e3, 8)] for i, v in zip(ii, inclination_only_cost(ii))])


_PLOTS = {"fig3": _plot_fig3, "fig5": _plot_fig5, "fig6": _plot_fig6, "fig7": _plot_fig7,
          "fig8": _plot_fig8, "fig9": _plot_fig9}


def cmd_plotdata(run: Run, args):
    with run.stage(f"plotdata:{args.which}"):
        _PLOTS[args.which](run, args)


# --- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="erofinder",
                                description="Find easily retrievable NEOs via capture onto "
                                            "Sun-Earth libration point orbits.")
    p.add_argument("--version", action="version", version=f"erofinder {__version__}")
    p.add_argument("-c", "--config", type=Path, help="RunConfig JSON file")
    p.add_argument("-o", "--out", type=Path, default=Path("run"), help="run directory")
    p.add_argument("--cache-dir", help="override the cache directory")
    p.add_argument("--seed", type=int, help="override the RNG seed")
    p.add_argument("--workers", type=int, help="override the worker count")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("families", help="build or load the six orbit families")
    s = sub.add_parser("manifolds", help="build or load stable-manifold sets")
    s.add_argument("--targets", nargs="+", choices=TARGET_LABELS)
    s = sub.add_parser("ingest", help="normalize a catalog export")
    s.add_argument("catalog", type=Path)
    s = sub.add_parser("prune", help="filter-estimate a catalog against the manifold bands")
    s.add_argument("catalog", type=Path)
    s.add_argument("--threshold", type=float, help="km/s (default from config)")
    s = sub.add_parser("optimize", help="optimize capture transfers")
    s.add_argument("catalog", type=Path)
    s.add_argument("--neo", nargs="+", help="designations (default: whole catalog)")
    s.add_argument("--targets", nargs="+", choices=TARGET_LABELS)
    s.add_argument("--window", nargs=2, metavar=("START", "END"))
    s.add_argument("--threshold", type=float, help="ERO threshold, m/s")
    s = sub.add_parser("rank", help="rank EROs from a solutions CSV")
    s.add_argument("solutions", type=Path)
    s.add_argument("--threshold", type=float, help="ERO threshold, m/s")
    s = sub.add_parser("pipeline", help="ingest, prune, optimize, rank and report")
    s.add_argument("catalog", type=Path)
    s = sub.add_parser("plotdata", help="emit columnar data for a figure")
    s.add_argument("which", choices=FIGURES)
    s.add_argument("--jacobi", type=float, default=3.0004448196, help="fig5 energy level")
    s.add_argument("--threshold", type=float, default=500.0, help="fig7/fig8 dv, m/s")
    s.add_argument("--members", type=int, default=10, help="fig3 orbits per family")
    s.add_argument("--samples", type=int, default=200, help="fig3 points per orbit")
    s.add_argument("--catalog", type=Path, help="fig9 catalog")
    s.add_argument("--solutions", type=Path, help="fig9 solutions CSV")
    return p


_COMMANDS = {"families": cmd_families, "manifolds": cmd_manifolds, "ingest": cmd_ingest,
             "prune": cmd_prune, "optimize": cmd_optimize, "rank": cmd_rank,
             "pipeline": cmd_pipeline, "plotdata": cmd_plotdata}


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    kw = {}
    if args.cache_dir:
        kw["cache_dir"] = args.cache_dir
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.workers is not None:
        kw["workers"] = args.workers
    if getattr(args, "window", None):
        kw["window"] = tuple(args.window)
    if args.command in ("optimize", "rank") and args.threshold is not None:
        kw["ero_threshold"] = args.threshold
    return replace(cfg, **kw) if kw else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    logging.getLogger("numba").setLevel(logging.WARNING)
    try:
        cfg = _config(args)
    except (ConfigError, OSError) as exc:
        print(f"erofinder: [config] {exc}", file=sys.stderr)
        return 2
    run = Run(cfg, args.out, args.command)
    try:
        _COMMANDS[args.command](run, args)
    except StageError as exc:
        print(f"erofinder: {exc}", file=sys.stderr)
        run.manifest()
        return 1
    except (CatalogError, OSError) as exc:
        print(f"erofinder: [{args.command}] {exc}", file=sys.stderr)
        run.manifest()
        return 1
    run.manifest()
    return 0


if __name__ == "__main__":
    sys.exit(main())
