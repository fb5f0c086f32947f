"""Compare the compiled pairwise log-density kernel with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--dim 20] [--reps 20]
"""
import argparse
import timeit

import numpy as np

from clubmi import kernels
from clubmi.kernels import _pairwise_py


def best_of(fn, reps):
    return min(timeit.repeat(fn, number=1, repeat=reps))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dim", type=int, default=20)
    parser.add_argument("--reps", type=int, default=20)
    parser.add_argument("--sizes", default="32,64,128,256,512,1024")
    args = parser.parse_args()
    if kernels.compiled_backend is None:
        raise SystemExit("compiled extension not built; run `pip install -e .` first")
    compiled = kernels.compiled_backend
    rng = np.random.default_rng(0)
    print(f"{'N':>6} {'pass':>8} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8} {'max diff':>9}")
    for n in (int(s) for s in args.sizes.split(",")):
        mu = rng.normal(size=(n, args.dim))
        lv = 0.3 * rng.normal(size=(n, args.dim))
        y = rng.normal(size=(n, args.dim))
        g = rng.normal(size=(n, n))
        cases = {
            "forward": (lambda: _pairwise_py.pair_logprob(mu, lv, y),
                        lambda: compiled.pair_logprob(mu, lv, y)),
            "backward": (lambda: _pairwise_py.pair_logprob_backward(g, mu, lv, y),
                         lambda: compiled.pair_logprob_backward(g, mu, lv, y)),
        }
        for name, (py_fn, c_fn) in cases.items():
            a, b = py_fn(), c_fn()
            if name == "forward":
                diff = float(np.abs(a - b).max())
            else:
                diff = max(float(np.abs(u - v).max()) for u, v in zip(a, b))
            t_py, t_c = best_of(py_fn, args.reps), best_of(c_fn, args.reps)
            print(f"{n:6d} {name:>8} {1e3 * t_py:10.3f} {1e3 * t_c:10.3f} "
                  f"{t_py / t_c:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
