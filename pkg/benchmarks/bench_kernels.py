"""Compiled vs numpy kernels: per-call timings plus an end-to-end run.

    python3 benchmarks/bench_kernels.py [--n 300] [--p 120] [--repeat 5]

The end-to-end row runs one LF inference in a subprocess twice, once per
value of HDINFER_NO_JIT, so both paths are timed from a cold import.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hdinfer import _kernels

E2E = """
import time, numpy as np
from hdinfer import Dataset, lf
rng = np.random.default_rng(0)
X = rng.standard_normal(({n}, {p})); b = np.zeros({p}); b[:3] = 1.0
y = X @ b + rng.standard_normal({n})
L = np.zeros(({p}, 2)); L[0, 0] = 1.0; L[:, 1] = 1.0 / {p}
t = time.perf_counter(); lf(Dataset(X, y), L, "linear"); print(time.perf_counter() - t)
"""


def wls_case(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    z = X[:, :5] @ np.ones(5) + rng.standard_normal(n)
    w = rng.uniform(0.1, 0.25, n)
    xwx = (w[:, None] * X * X).sum(axis=0) / n
    pen = np.full(p, 0.5 * np.sqrt(np.log(p) / n) * 0.25)
    return X, w, pen, z, xwx


def dual_case(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    H = X.T @ X / n
    x = np.zeros(p)
    x[0] = 1.0
    M = np.column_stack([x, np.eye(p)])
    return M.T @ H @ M, np.concatenate([[1.0], x]), 0.5 * np.sqrt(np.log(p) / n)


def time_wls(fn, case, repeat):
    X, w, pen, z, xwx = case
    mask = np.ones(X.shape[1], dtype=np.bool_)

    def run():
        beta = np.zeros(X.shape[1])
        fn(X, w, pen, beta, z.copy(), xwx, mask, 1e-8, 10_000)
    run()
    return min(timeit.repeat(run, number=1, repeat=repeat))


def time_dual(fn, case, repeat):
    Q, b, radius = case

    def run():
        v = np.zeros(b.size)
        fn(Q, b, radius, v, np.zeros(b.size), 1e-8, 2_000)
    run()
    return min(timeit.repeat(run, number=1, repeat=repeat))


def end_to_end(n, p, no_jit):
    env = dict(os.environ, HDINFER_NO_JIT="1" if no_jit else "0")
    out = subprocess.run([sys.executable, "-c", E2E.format(n=n, p=p)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--p", type=int, default=120)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args(argv)

    wc, dc = wls_case(args.n, args.p), dual_case(args.n, args.p)
    rows = [
        ("cd_wls", time_wls(_kernels.cd_wls_nb, wc, args.repeat),
         time_wls(_kernels.cd_wls_np, wc, args.repeat)),
        ("cd_dual", time_dual(_kernels.cd_dual_nb, dc, args.repeat),
         time_dual(_kernels.cd_dual_np, dc, args.repeat)),
    ]
    if not args.skip_e2e:
        rows.append(("lf end-to-end", end_to_end(args.n, args.p, False),
                     end_to_end(args.n, args.p, True)))
    print(f"{'kernel':<16}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}")
    for name, tj, tn in rows:
        print(f"{name:<16}{tj:>12.4g}{tn:>12.4g}{tn / tj:>10.1f}")


if __name__ == "__main__":
    main()
