"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel with the best-of-N wall time for each backend,
the speedup, and whether the two outputs are bit-identical.
"""

import argparse
import timeit

import numpy as np

from stopnet import _kernels_py

try:
    from stopnet import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def cases(rng):
    rewards = rng.normal(size=(20_000, 65))
    utilities = np.cumsum(rng.uniform(0, 0.02, size=(20_000, 33)), axis=1)
    n_t, n_h = 400, 801
    h = np.linspace(-2.0, 2.0, n_h)
    feet = np.clip(h + 0.8 * np.tanh(h) * (4.0 / n_t) * 0.9 + np.zeros((n_t, 1)), -2.0, 2.0)
    terminal = 1.0 / (1.0 + np.exp(-4.0 * h))
    return {
        "snell_envelope": lambda m: m.snell_envelope(rewards, 1e-9),
        "first_gain_stop": lambda m: m.first_gain_stop(utilities, 0.005),
        "hjb_sweep": lambda m: m.hjb_sweep(-2.0, 4.0 / (n_h - 1), feet, terminal, 0.2 / n_t),
    }


def same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in zip(a, b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if compiled is None:
        print("compiled extension not available; only the numpy fallback can be timed")
    print(f"{'kernel':<16} {'python (ms)':>12} {'cython (ms)':>12} {'speedup':>8}  identical")
    for name, fn in cases(np.random.default_rng(args.seed)).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
        if compiled is None:
            print(f"{name:<16} {t_py * 1e3:>12.2f} {'-':>12} {'-':>8}  -")
            continue
        t_cy = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat))
        print(f"{name:<16} {t_py * 1e3:>12.2f} {t_cy * 1e3:>12.2f} {t_py / t_cy:>7.1f}x  "
              f"{same(fn(_kernels_py), fn(compiled))}")


if __name__ == "__main__":
    main()
