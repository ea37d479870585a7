"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once untimed (compilation), then ``--repeat`` times per
backend; the table shows the best wall time, the speed-up and the largest
absolute difference between the two outputs.
"""

import argparse
import time

import numpy as np

from slice_attrib import kernels as k


def _inputs(rng):
    n_t, n, p = 1200, 15, 5
    ar = rng.uniform(-0.15, 0.15, (n, p))
    src = np.array([2, 5, 7, 11], dtype=np.int64)
    dst = np.array([5, 7, 11, 13], dtype=np.int64)
    lag = np.ones(4, dtype=np.int64)
    coef = np.full(4, 0.4)
    onset = np.array([210, 220, 230, 240], dtype=np.int64)
    drive = rng.standard_normal((n_t, n))
    x = rng.standard_normal(5000)
    x[2500:] += 1.0
    gamma = 0.6 ** np.arange(8)
    q = rng.standard_normal((1000, 12))
    fx = rng.uniform(0.0, 5.0, 2000)
    d1 = rng.uniform(1.0, 12.0, 2000)
    d2 = rng.uniform(20.0, 900.0, 2000)
    return {
        "simulate_var": ((ar, src, dst, lag, coef, onset, drive),),
        "ar1_filter": ((rng.standard_normal((5000, 15)), 0.28),),
        "cusum_gaussian": ((x, 0.0, 1.0, 1.0, 0.3, 4.6),),
        "banded_apply": ((gamma, q),),
        "betainc": ((d1 / 2, d2 / 2, rng.uniform(0.0, 1.0, 2000)),),
        "f_sf": ((fx, d1, d2),),
    }


def _best(fn, args, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(o, dtype=float)) for o in out])
    return np.ravel(np.asarray(out, dtype=float))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':16s} {'numba ms':>10s} {'numpy ms':>10s} {'speed-up':>9s} {'max |diff|':>11s}")
    for name, (call,) in _inputs(rng).items():
        jit = getattr(k, f"{name}_jit")
        ref = getattr(k, f"{name}_numpy")
        jit(*call)  # compile
        t_jit, o_jit = _best(jit, call, args.repeat)
        t_ref, o_ref = _best(ref, call, args.repeat)
        diff = float(np.max(np.abs(_flat(o_jit) - _flat(o_ref)))) if _flat(o_jit).size else 0.0
        print(f"{name:16s} {1e3 * t_jit:10.3f} {1e3 * t_ref:10.3f} {t_ref / t_jit:9.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
