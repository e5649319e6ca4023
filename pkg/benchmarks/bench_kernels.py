"""Numba vs numpy timing of the geometry kernels.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Both paths are called directly (use_numba=True/False) so the environment
variable STOCS_NUMBA does not matter here.  Results are checked to agree.
"""
import argparse
import time

import numpy as np

from stocs import _accel
from stocs.scenario import load_scenario


def bench(fn, repeat):
    fn()  # warm-up (jit compile)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--scenario", default="mustard_pivot")
    a = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba not importable; only the numpy path exists")
        return
    sc = load_scenario(a.scenario)
    env, B = sc.environment, sc.object.boundary_points
    rng = np.random.default_rng(0)
    poses = np.column_stack([rng.uniform(-0.3, 0.3, 200), rng.uniform(0.0, 0.3, 200), rng.uniform(-np.pi, np.pi, 200)])
    pts = rng.uniform(-0.5, 0.5, (20000, 2))
    args = (env.verts, env.offsets, env.enorm)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, f_np, f_nb in [
        (f"signed_distance {len(pts)} pts",
         lambda: _accel.signed_distance_batch(pts, *args, use_numba=False),
         lambda: _accel.signed_distance_batch(pts, *args, use_numba=True)),
        (f"gap_table {len(poses)}x{len(B)}",
         lambda: _accel.gap_table(poses, B, *args, use_numba=False),
         lambda: _accel.gap_table(poses, B, *args, use_numba=True)),
    ]:
        d0, d1 = f_np(), f_nb()
        d0 = d0[0] if isinstance(d0, tuple) else d0
        d1 = d1[0] if isinstance(d1, tuple) else d1
        assert np.allclose(d0, d1, atol=1e-12), name
        t0, t1 = bench(f_np, a.repeat), bench(f_nb, a.repeat)
        print(f"{name:28s} {1e3 * t0:>10.3f} {1e3 * t1:>10.3f} {t0 / t1:>8.1f}")


if __name__ == "__main__":
    main()
