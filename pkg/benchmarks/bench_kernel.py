"""Compare the compiled and pure-Python coordinate-descent kernels.

Times a warm-started lambda path on a random problem and one full
integrative analysis, once per kernel, and checks that both kernels
return identical coefficients.

    python3 benchmarks/bench_kernel.py --n 200 --p 100 --repeat 5
"""

import argparse
import time

import numpy as np

from mbpath.data import TargetDataset
from mbpath.lasso import PenalizedProblem, _kernel, lambda_path
from mbpath.lasso.solver import POLISH_AFTER
from mbpath.pathway import PathwayConfig, run_integrative
from mbpath.sim import PerturbationSpec, generate_cohorts, preset


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def path_case(n, p, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, p))
    w = np.zeros(p)
    w[:10] = rng.normal(0, 1, 10)
    y = A @ w + rng.standard_normal(n)
    G = np.ascontiguousarray(A.T @ A / n)
    c = A.T @ y / n
    grid = lambda_path(PenalizedProblem(y, A), 100, 0.01)
    return G, c, grid


def bench_path(kernel, G, c, grid):
    w = np.zeros(G.shape[0])
    return kernel(G, c, w, np.ones(G.shape[0]), grid, 1e-7, 100_000, POLISH_AFTER)


def bench_pipeline(kernel, target, external):
    saved = _kernel.cd_path
    _kernel.cd_path = kernel
    try:
        return run_integrative(target, external, PathwayConfig(seed=1)).theta_tilde
    finally:
        _kernel.cd_path = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--p", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if _kernel.BACKEND != "cython":
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation`")
    kernels = {"cython": _kernel.cd_path, "python": _kernel.python_cd_path}

    G, c, grid = path_case(args.n, args.p, args.seed)
    print(f"lambda path: n={args.n} p={args.p}, {grid.size} lambdas, best of {args.repeat}")
    results = {}
    for name, k in kernels.items():
        secs, out = best_of(lambda: bench_path(k, G, c, grid), args.repeat)
        results[name] = (secs, out[0])
        print(f"  {name:7s} {secs * 1e3:10.2f} ms   sweeps {int(out[1].sum())}")
    same = np.array_equal(results["cython"][1], results["python"][1])
    print(f"  speedup {results['python'][0] / results['cython'][0]:.1f}x, "
          f"identical coefficients: {same}")

    scen = preset("fig2c-desk", p=args.p, n=args.n)
    target, external, _ = generate_cohorts(scen.generative_spec(), PerturbationSpec(),
                                           scen.n, scen.N, scen.p, args.seed)
    target = TargetDataset(target.design, target.outcome)
    print(f"integrative analysis: n={scen.n} N={scen.N} p={scen.p}")
    pipe = {}
    for name, k in kernels.items():
        secs, theta = best_of(lambda: bench_pipeline(k, target, external), args.repeat)
        pipe[name] = (secs, theta)
        print(f"  {name:7s} {secs * 1e3:10.2f} ms   theta_tilde {theta!r}")
    print(f"  speedup {pipe['python'][0] / pipe['cython'][0]:.1f}x, "
          f"identical estimate: {pipe['python'][1] == pipe['cython'][1]}")


if __name__ == "__main__":
    main()
