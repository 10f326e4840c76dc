"""Compare the compiled and pure-Python solver kernels on room-scale partition problems.

    python3 benchmarks/bench_gmp.py [--sizes 2000,8000,20000] [--repeat 3]

Both backends run the same solve; the script checks that they return the
same partition and energy and prints the median wall time of each.
"""
import argparse
import statistics
import time

from superpart.gmp import (
    GMPConfig,
    augment_features,
    compiled_available,
    gmp_edge_weights,
    lambda_from_normalized,
    min_superpoint_size,
    solve_gmp,
)
from superpart.harness import SceneSpec, baseline_descriptors, generate_synthetic_scene
from superpart.prep import prepare


def _density_for(n_points):
    # a 6 x 5 x 3 m room has about 126 m^2 of sampled surface
    return max(1.0, n_points / 126.0)


def _time(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="2000,8000,20000")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--lambda", dest="lam", type=float, default=1.0)
    args = ap.parse_args()
    if not compiled_available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")

    cfg = GMPConfig()
    print(f"{'points':>8} {'edges':>8} {'superpoints':>11} {'compiled s':>11} {'python s':>9} {'speedup':>8}")
    for size in (int(s) for s in args.sizes.split(",")):
        c = generate_synthetic_scene(SceneSpec(seed=0, density=_density_for(size)))
        p = prepare(c)
        desc = baseline_descriptors(p.cloud, "raw_features", table=p.table)
        w = gmp_edge_weights(desc, p.graph, lambda_from_normalized(args.lam, p.graph.connectivity), cfg.sigma)
        feats = augment_features(desc, c.positions, cfg.alpha_spat)
        n_min = min_superpoint_size(args.lam, cfg.n_min_1)
        results = {}
        for backend in ("compiled", "python"):
            results[backend] = _time(lambda: solve_gmp(feats, p.graph, w, n_min, cfg, backend=backend),
                                     args.repeat)
        (tc, a), (tp, b) = results["compiled"], results["python"]
        if a.partition.assignment.tolist() != b.partition.assignment.tolist() or a.energy != b.energy:
            raise SystemExit(f"backends disagree at {size} points")
        print(f"{c.n:>8} {p.graph.num_edges:>8} {a.partition.num_superpoints:>11} "
              f"{tc:>11.3f} {tp:>9.3f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
