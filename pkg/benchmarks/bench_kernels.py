"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Kernels are called directly (``*_nb`` vs ``*_np``), so the result does not
depend on RMHEDGE_DISABLE_NUMBA. A final pair of rows times a full PIDE solve
and a path simulation under each backend in a subprocess.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from rmhedge import _kernels as kern


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)


def cases(rng):
    B, N = 4, 2000
    lo = rng.uniform(-1, 0, (B, N))
    up = rng.uniform(-1, 0, (B, N))
    dg = 3 + rng.uniform(0, 1, (B, N))
    rhs = rng.normal(size=(B, N))
    yield "thomas_batch 4x2000", \
        (lambda: kern.thomas_batch_nb(lo, dg, up, rhs)), (lambda: kern.thomas_batch_np(lo, dg, up, rhs))

    nodes_xi = np.linspace(-3, 3, 400)
    nodes_z = np.exp(nodes_xi)
    z = np.exp(rng.uniform(-3.2, 3.2, 100_000))
    xi = np.log(z)
    yield "locate_axis 1e5", \
        (lambda: kern.locate_axis_nb(nodes_xi, nodes_z, xi, z, -3.6, 3.6)), \
        (lambda: kern.locate_axis_np(nodes_xi, nodes_z, xi, z, -3.6, 3.6))

    field = rng.normal(size=(2, 400, 3))
    c = rng.integers(0, 2, 100_000)
    idx = rng.integers(0, 399, 100_000)
    alpha = rng.uniform(0, 1, 100_000)
    yield "gather_1d 1e5", \
        (lambda: kern.gather_1d_nb(field, c, idx, alpha)), (lambda: kern.gather_1d_np(field, c, idx, alpha))

    field2 = rng.normal(size=(2, 200, 61, 3))
    i0 = rng.integers(0, 199, 100_000)
    i1 = rng.integers(0, 60, 100_000)
    a0 = rng.uniform(0, 1, 100_000)
    a1 = rng.uniform(0, 1, 100_000)
    yield "gather_2d 1e5", \
        (lambda: kern.gather_2d_nb(field2, c, i0, a0, i1, a1)), \
        (lambda: kern.gather_2d_np(field2, c, i0, a0, i1, a1))

    cdf = np.cumsum(np.exp(-0.3) * 0.3 ** np.arange(12) / np.cumprod(np.r_[1, np.arange(1, 12)]))
    u = rng.random(100_000)
    yield "poisson_counts 1e5", \
        (lambda: kern.poisson_counts_nb(u, cdf)), (lambda: kern.poisson_counts_np(u, cdf))


_PIPELINE = """
import time, numpy as np
from rmhedge import preset_model, solve_pide, simulate_paths, SpatialGrid, Axis, TimeGrid
m, d = preset_model("merton_jump", {"sigma": 0.2, "r": 0.0, "jump_intensity": 0.3, "jump_mean": -0.1,
                    "jump_std": 0.15}, "call", {"strike": 100.0, "maturity": 1.0})
g = SpatialGrid((Axis(100 * np.exp(-7), 100 * np.exp(7), 400, True),))
solve_pide(m, d, g, 0.05)
t0 = time.perf_counter(); solve_pide(m, d, g, 0.004); t1 = time.perf_counter()
simulate_paths(m, np.array([100.0]), 0, TimeGrid(0.0, 1.0, 250), 20000, 1)
t2 = time.perf_counter(); simulate_paths(m, np.array([100.0]), 0, TimeGrid(0.0, 1.0, 250), 20000, 1)
t3 = time.perf_counter()
print(t1 - t0, t3 - t2)
"""


def pipeline(disable):
    env = dict(os.environ)
    env["RMHEDGE_DISABLE_NUMBA"] = "1" if disable else ""
    out = subprocess.run([sys.executable, "-c", _PIPELINE], env=env, capture_output=True, text=True, check=True)
    return [float(x) for x in out.stdout.split()]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-pipeline", action="store_true")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}")
    for name, nb, npy in cases(rng):
        a = best_of(nb, args.repeat) * 1e3
        b = best_of(npy, args.repeat) * 1e3
        print(f"{name:<24}{a:>12.3f}{b:>12.3f}{b / a:>10.1f}")
    if not args.no_pipeline:
        nb = pipeline(False)
        npy = pipeline(True)
        for k, name in enumerate(("solve_pide merton 400", "simulate 2e4x250")):
            print(f"{name:<24}{nb[k] * 1e3:>12.1f}{npy[k] * 1e3:>12.1f}{npy[k] / nb[k]:>10.1f}")


if __name__ == "__main__":
    main()
