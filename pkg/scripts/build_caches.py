"""Build (or verify) the family and manifold caches and print the filter bands.

    python scripts/build_caches.py [--config run.json] [--cache-dir cache]
"""
import argparse
import time
from dataclasses import replace

from erofinder.cache import ensure_families, ensure_manifolds
from erofinder.config import RunConfig
from erofinder.manifolds import element_envelope
from erofinder.prune import bands_from_sets


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", help="RunConfig JSON")
    p.add_argument("--cache-dir")
    args = p.parse_args(argv)
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.cache_dir:
        cfg = replace(cfg, cache_dir=args.cache_dir)

    t0 = time.perf_counter()
    fams, built = ensure_families(cfg)
    print(f"families: built {built or 'none'} ({time.perf_counter() - t0:.1f} s)")
    for k, f in sorted(fams.items()):
        lo, hi = f.jacobi_range
        print(f"  {k:3s} {len(f):4d} members  J [{lo:.10f}, {hi:.10f}]")

    t0 = time.perf_counter()
    sets, built = ensure_manifolds(cfg, fams)
    print(f"manifolds: built {built or 'none'} ({time.perf_counter() - t0:.1f} s)")
    for k, (_, ms) in sorted(sets.items()):
        print(f"  {k:4s} {len(ms):6d} trajectories, {100 * ms.reached.mean():5.1f}% reach the section")

    print("bands (r_p AU, r_a AU, i deg):")
    for b in bands_from_sets(sets):
        if b.j_dependent:
            env = element_envelope(sets[b.label][1])
            print(f"  {b.label:3s} vertical, fitted in J over [{env.jacobi.min():.7f}, "
                  f"{env.jacobi.max():.7f}]")
        else:
            print(f"  {b.label:3s} r_p {b.rp[0]:.4f}-{b.rp[1]:.4f}  r_a {b.ra[0]:.4f}-{b.ra[1]:.4f}"
                  f"  i {b.i_deg[0]:.3f}-{b.i_deg[1]:.3f}")


if __name__ == "__main__":
    main()
