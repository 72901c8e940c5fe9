"""Compare the numba-compiled kernels with the pure numpy/python fallback.

Each mode runs in a fresh interpreter (the switch is read at import time):

    python3 benchmarks/bench_kernels.py            # both modes, side by side
    python3 benchmarks/bench_kernels.py --repeat 5 --sizes 40,80 --dist-sizes 20

Reported times are the best of ``--repeat`` runs after one warm-up call (the
warm-up absorbs numba compilation, whose cost is printed separately). The
script also checks that both modes return the same numbers.
"""
import argparse
import json
import os
import subprocess
import sys
import time


def _workloads(sizes, dist_sizes):
    import numpy as np

    from curvelab import core as C
    from curvelab import metric as M
    from curvelab import spaces as S
    from curvelab import transport as T

    work = {}
    rng = np.random.default_rng(0)
    for n in sizes:
        # random planar clouds: the simplex needs real pivoting here (on a 1-D
        # grid the initial basis is already optimal)
        d = M.MetricMatrix.from_coords(rng.random((n, 2)))
        ma, mb = rng.random(n), rng.random(n)
        ma, mb = ma / ma.sum(), mb / mb.sum()
        work[f"w2_simplex_cloud{n}"] = lambda d=d, ma=ma, mb=mb: T.wasserstein(d, ma, mb, 2)[0]
        t = S.build(S.ou_spec(n))
        g = M.MetricMatrix.from_triple_coords(t)
        f = np.sin(t.coords)
        work[f"hopf_lax_ou{n}"] = lambda g=g, f=f: float(M.hopf_lax(g, f, 0.3).sum())
        work[f"gamma2_ou{n}"] = lambda t=t, f=f: float(C.gamma2(t, f).sum())
    for n in dist_sizes:
        t = S.build(S.ou_spec(n))
        work[f"intrinsic_distance_ou{n}"] = lambda t=t: float(M.intrinsic_distance(t).d.sum())
    g = S.random_graph(8, p=0.5, seed=3)
    work["intrinsic_distance_random8"] = lambda g=g: float(M.intrinsic_distance(g).d.sum())
    return work


def _child(sizes, dist_sizes, repeat):
    from curvelab import _accel
    out = {"numba": _accel.USE_NUMBA, "results": {}}
    for name, fn in _workloads(sizes, dist_sizes).items():
        t0 = time.perf_counter()
        value = fn()
        first = time.perf_counter() - t0
        best = min(_timed(fn) for _ in range(repeat))
        out["results"][name] = {"first": first, "best": best, "value": value}
    json.dump(out, sys.stdout)


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="40,80",
                    help="sizes for the transport, Hopf-Lax and Gamma_2 workloads")
    ap.add_argument("--dist-sizes", default="15,30",
                    help="grid sizes for the intrinsic-distance workload "
                         "(slow without numba)")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    dist_sizes = [int(s) for s in args.dist_sizes.split(",")]
    if args.child:
        _child(sizes, dist_sizes, args.repeat)
        return 0
    runs = {}
    for label, disable in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, CURVELAB_DISABLE_NUMBA=disable)
        res = subprocess.run([sys.executable, __file__, "--child", "--sizes", args.sizes,
                              "--dist-sizes", args.dist_sizes, "--repeat", str(args.repeat)],
                             capture_output=True, text=True, env=env, check=True)
        runs[label] = json.loads(res.stdout)
    if not runs["numba"]["numba"]:
        print("numba unavailable: both columns use the fallback path")
    print(f"{'workload':32s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s} "
          f"{'compile s':>10s}  same")
    for name, r in runs["numba"]["results"].items():
        q = runs["numpy"]["results"][name]
        same = abs(r["value"] - q["value"]) <= 1e-9 * max(1.0, abs(q["value"]))
        print(f"{name:32s} {r['best']:10.4f} {q['best']:10.4f} "
              f"{q['best'] / max(r['best'], 1e-12):8.1f} "
              f"{max(r['first'] - r['best'], 0.0):10.3f}  {'yes' if same else 'NO'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
