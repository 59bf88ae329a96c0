"""Compare the compiled and pure-Python SMO backends.

    python benchmarks/bench_smo.py [--n 100 200 400] [--repeat 3]

Both backends solve the same rbf-kernel problems; the script checks that
they agree and prints median wall time per solve.
"""

import argparse
import statistics
import time

import numpy as np

from opwatt.regress.svr import BACKENDS, kernel_matrix, solve_dual


def problem(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = 100 + 20 * np.sin(X[:, 0]) - 8 * X[:, 1] + rng.normal(0, 1.0, n)
    return kernel_matrix(X, X, "rbf", 1.0 / 3), y


def timed(K, y, C, eps, backend, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        sol = solve_dual(K, y, C, eps, backend=backend)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), sol


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, nargs="+", default=[100, 200, 400])
    ap.add_argument("--C", type=float, default=10.0)
    ap.add_argument("--epsilon", type=float, default=0.5)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if "compiled" not in BACKENDS:
        print("compiled backend not built; only the python backend is available")
    print(f"{'n':>5} {'backend':>9} {'iters':>7} {'median_s':>10} {'speedup':>8}")
    for n in args.n:
        K, y = problem(n)
        t_py, s_py = timed(K, y, args.C, args.epsilon, "python", args.repeat)
        print(f"{n:>5} {'python':>9} {s_py.iterations:>7} {t_py:>10.4f} {'1.0':>8}")
        if "compiled" in BACKENDS:
            t_c, s_c = timed(K, y, args.C, args.epsilon, "compiled", args.repeat)
            same = np.allclose(s_c.beta, s_py.beta, atol=1e-9) and s_c.iterations == s_py.iterations
            print(f"{n:>5} {'compiled':>9} {s_c.iterations:>7} {t_c:>10.4f} {t_py / t_c:>8.1f}"
                  f"{'' if same else '  MISMATCH'}")


if __name__ == "__main__":
    main()
