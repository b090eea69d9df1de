"""Compare the compiled block kernels with the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints the median time per call for each kernel and backend, and the speed-up.
"""
import argparse
import timeit

import numpy as np

from fufi import kernels


def cases(rng):
    flows = rng.random((64, 128, 128))
    dist = kernels.block_normalize(rng.random((64, 128, 128)), 4, 1e-9, "python")
    truth = kernels.block_normalize(rng.random((64, 128, 128)), 4, 1e-9, "python")
    ranks2 = np.arange(2, 2 * 20 + 1, 2, dtype=np.int64)
    return {
        "block_sum 64x128x128 N=4": lambda b: kernels.block_sum(flows, 4, b),
        "block_normalize 64x128x128 s=4": lambda b: kernels.block_normalize(flows, 4, 1e-9, b),
        "block_kl 64x128x128 s=4": lambda b: kernels.block_kl(dist, truth, 4, 1e-8, b),
        "wilcoxon_null_counts n=20": lambda b: kernels.wilcoxon_null_counts(ranks2, b),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = sorted(kernels.BACKENDS)
    print(f"backends: {', '.join(backends)} (default: {kernels.BACKEND})")
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s}" + "".join(f"{b:>14s}" for b in backends) + "   speed-up")
    for name, fn in cases(rng).items():
        times = {}
        for b in backends:
            fn(b)
            times[b] = float(np.median(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)))
        row = f"{name:34s}" + "".join(f"{times[b] * 1e3:12.3f}ms" for b in backends)
        if "compiled" in times:
            row += f"   {times['python'] / times['compiled']:6.2f}x"
        print(row)


if __name__ == "__main__":
    main()
