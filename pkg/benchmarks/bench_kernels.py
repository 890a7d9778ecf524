"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--steps N] [--repeat R]

Both backends get the same pre-drawn random numbers, so the script also
checks that their outputs agree bit for bit.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from epolab import kernels
from epolab.energy import preset


def _time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_chain(backend, p, props, log_u, thin):
    x = p.default_start().astype(np.float64)
    e = float(backend.energy_point(p.kernel_kind(), p.packed(), x))
    out = np.empty((props.shape[0] // thin, p.dim))
    backend.mh_chain(p.kernel_kind(), p.packed(), x, e, props, log_u, p.kT, p.periodic, thin, out)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200_000, help="Metropolis steps per potential")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--matrix", type=int, default=24, help="size of the symmetric matrix for Jacobi")
    args = ap.parse_args(argv)

    if kernels.compiled_backend is None:
        print("compiled extension not built; only the Python fallback is available")
        return 1
    backends = {"compiled": kernels.compiled_backend, "python": kernels.python_backend}
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'compiled s':>12}{'python s':>12}{'speedup':>10}  identical")
    for name in ("double-well", "mueller-brown", "torsion-2d", "gmm-2d"):
        p = preset(name)
        props = rng.standard_normal((args.steps, p.dim)) * 0.3
        log_u = np.log(rng.random(args.steps))
        res = {b: _time(lambda b=b: bench_chain(backends[b], p, props, log_u, 10), args.repeat)
               for b in backends}
        same = np.array_equal(res["compiled"][1], res["python"][1])
        tc, tp = res["compiled"][0], res["python"][0]
        print(f"{'mh_chain ' + name:<28}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}  {same}")

    a = rng.standard_normal((args.matrix, args.matrix))
    a = a + a.T
    res = {b: _time(lambda b=b: backends[b].jacobi_eigh(a), args.repeat) for b in backends}
    same = all(np.array_equal(x, y) for x, y in zip(res["compiled"][1], res["python"][1]))
    tc, tp = res["compiled"][0], res["python"][0]
    print(f"{f'jacobi_eigh {args.matrix}x{args.matrix}':<28}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
