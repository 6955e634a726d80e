"""Time the numba kernels against their numpy counterparts.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 20] [--N 8] [--dim 64]

Both kernel tables are called directly, so the environment flag does not
matter here.  One warm-up call per kernel absorbs the jit compile.  The last
block compares the generic lLK driver with the fused sweep on the bundled
linear problem.
"""

import argparse
import time

import numpy as np

from lkreg import _kernels
from lkreg.problems import add_noise, get_problem
from lkreg.solvers import SolverConfig, run_llk


def best_of(fn, repeat):
    fn()  # warm-up / compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def sweep_args(problem, sample, tau):
    A = np.ascontiguousarray(np.vstack([b.matrix for b in problem.system.blocks]))
    offsets = np.concatenate([[0], np.cumsum([b.dim_y for b in problem.system.blocks])]).astype(np.int64)
    y = np.concatenate(sample.data)
    thresholds = tau * np.array(sample.noise.deltas)
    return A, offsets, y, thresholds, np.asarray(problem.x0, dtype=float), np.asarray(problem.x_exact)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--N", type=int, default=8)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--delta", type=float, default=1e-3)
    args = parser.parse_args(argv)

    if not _kernels.HAVE_NUMBA:
        print("numba is not importable; both columns run the numpy path")

    rng = np.random.default_rng(0)
    X = rng.standard_normal((args.N, args.dim))
    lam2 = 0.25
    problem = get_problem(f"fredholm-{args.dim}-{args.N}")
    sample = add_noise(problem, [args.delta] * problem.N, seed=0)
    tau = 3.0
    A, offsets, y, thr, x0, ref = sweep_args(problem, sample, tau)

    cases = {
        "cyclic_diff": lambda k: k["cyclic_diff"](X),
        "cyclic_diff_adjoint": lambda k: k["cyclic_diff_adjoint"](X),
        "circulant_balance": lambda k: k["circulant_balance"](X, lam2),
        "kaczmarz_sweep": lambda k: k["kaczmarz_sweep"](A, offsets, y, thr, x0.copy(), ref, False,
                                                        10_000, _kernels.LOPING),
    }
    print(f"N={args.N} dim={args.dim} delta={args.delta:g} best of {args.repeat}")
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, call in cases.items():
        t_np = best_of(lambda: call(_kernels.NUMPY_KERNELS), args.repeat)
        t_nb = best_of(lambda: call(_kernels.NUMBA_KERNELS), args.repeat)
        print(f"{name:<22}{t_np * 1e3:>12.4f}{t_nb * 1e3:>12.4f}{t_np / t_nb:>10.1f}")

    cfg = SolverConfig(tau)
    t_gen = best_of(lambda: run_llk(problem.system, problem.x0, sample.data, sample.noise, cfg), args.repeat)
    t_ker = best_of(lambda: run_llk(problem.system, problem.x0, sample.data, sample.noise, cfg, engine="kernel"),
                    args.repeat)
    steps = len(run_llk(problem.system, problem.x0, sample.data, sample.noise, cfg).trace)
    print(f"\nrun_llk ({steps} steps, active kernels: {'numba' if _kernels.USE_NUMBA else 'numpy'})")
    print(f"{'generic engine':<22}{t_gen * 1e3:>12.4f} ms")
    print(f"{'kernel engine':<22}{t_ker * 1e3:>12.4f} ms   speedup {t_gen / t_ker:.1f}x")


if __name__ == "__main__":
    main()
