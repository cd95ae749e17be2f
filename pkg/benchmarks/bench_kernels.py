"""Time the numba and numpy HMM kernels on the same random potentials.

Usage::

    python3 benchmarks/bench_kernels.py --T 2000 --K 10 --repeat 20

The numba path is compiled once before timing.  Both paths must agree to
within 1e-9 on every output, otherwise the script exits with status 1.
"""
from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from kitrecover.bnp_hmm import kernels


def potentials(T: int, K: int, seed: int):
    rng = np.random.default_rng(seed)
    log_pi0 = np.log(rng.dirichlet(np.ones(K)))
    log_A = np.log(rng.dirichlet(np.ones(K), size=K))
    log_b = rng.normal(scale=3.0, size=(T, K))
    return log_pi0, log_A, log_b


def _max_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--T", type=int, default=2000)
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    inputs = potentials(args.T, args.K, args.seed)
    status = 0
    print(f"T={args.T} K={args.K} repeat={args.repeat}")
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max diff':>12}")
    for name in ("forward_log", "forward_backward", "viterbi"):
        f_np = getattr(kernels, f"{name}_np")
        f_nb = getattr(kernels, f"{name}_nb")
        ref, out = f_np(*inputs), f_nb(*inputs)  # also triggers compilation
        diff = _max_diff(ref, out)
        if diff > 1e-9:
            status = 1
        t_np = min(timeit.repeat(lambda: f_np(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>10.1f}{diff:>12.1e}")
    return status


if __name__ == "__main__":
    sys.exit(main())
