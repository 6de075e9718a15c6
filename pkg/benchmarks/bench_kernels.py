"""Time the compiled kernels against the numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel and backend with the best wall time and the
speedup relative to the numpy fallback. Both backends are checked for
agreement before timing.
"""
import argparse
import sys
import timeit

import numpy as np

from moef._kernels import available_backends


def cases(rng):
    windows = rng.normal(size=(13 * 3 * 256, 24))
    param = rng.normal(size=1_000_000)
    grad = rng.normal(size=param.shape)
    labels = rng.integers(0, 2, 200_000).astype(np.int8)
    scores = rng.integers(0, 1000, labels.size) / 1000.0

    def adagrad(mod):
        p, acc = param.copy(), np.full(param.shape, 0.1)
        return lambda: mod.adagrad_update(p, grad, acc, 0.01, 1e-8)

    return {
        "fft_modulus (9984 windows, N_w=24, N_f=32)": lambda mod: (lambda: mod.fft_modulus_rows(windows, 32)),
        "adagrad_update (1M params)": adagrad,
        "auc_pair_counts (200k, tied scores)": lambda mod: (lambda: mod.auc_pair_counts(labels, scores)),
    }


def check_agreement(backends, rng):
    x = rng.normal(size=(64, 24))
    ref = backends["python"].fft_modulus_rows(x, 32)
    labels = rng.integers(0, 2, 1000).astype(np.int8)
    scores = rng.integers(0, 20, 1000) / 20.0
    for name, mod in backends.items():
        if np.max(np.abs(mod.fft_modulus_rows(x, 32) - ref)) > 1e-9:
            raise SystemExit(f"{name}: fft_modulus disagrees with the fallback")
        if mod.auc_pair_counts(labels, scores) != backends["python"].auc_pair_counts(labels, scores):
            raise SystemExit(f"{name}: auc_pair_counts disagrees with the fallback")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; timing the numpy fallback only", file=sys.stderr)
    rng = np.random.default_rng(0)
    check_agreement(backends, rng)
    for label, make in cases(rng).items():
        base = None
        for name, mod in backends.items():
            best = min(timeit.repeat(make(mod), number=1, repeat=args.repeat))
            base = base or best
            print(f"{label:<46} {name:<7} {best * 1e3:9.2f} ms  x{base / best:5.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
