"""Time the compiled row kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--rows 4096] [--width 64] [--repeat 20]

Both backends are imported directly, so the EXITBERT_KERNELS setting does not matter.
Prints one line per kernel with the best-of-repeat time for each backend.
"""
import argparse
import timeit

import numpy as np

from exitbert import _pykernels

try:
    from exitbert import _ckernels
except ImportError:
    _ckernels = None


def cases(rows, width, rng):
    x = rng.normal(size=(rows, width))
    g = rng.normal(size=(rows, width))
    gamma, beta = rng.normal(size=width), rng.normal(size=width)
    y = _pykernels.softmax_rows(x)
    _, xhat, inv_std = _pykernels.layer_norm_rows(x, gamma, beta, 1e-12)
    return {
        "softmax_rows": (x,),
        "softmax_rows_backward": (y, g),
        "log_softmax_rows": (x,),
        "layer_norm_rows": (x, gamma, beta, 1e-12),
        "layer_norm_rows_backward": (g, xhat, inv_std, gamma),
        "gelu": (x,),
        "gelu_backward": (x, g),
    }


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=4096)
    parser.add_argument("--width", type=int, default=64)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
    print(f"rows={args.rows} width={args.width} best of {args.repeat}")
    print(f"{'kernel':<26}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, inputs in cases(args.rows, args.width, np.random.default_rng(0)).items():
        py = best_time(getattr(_pykernels, name), inputs, args.repeat) * 1e3
        if _ckernels is None:
            print(f"{name:<26}{py:>10.3f}{'-':>11}{'-':>9}")
            continue
        cy = best_time(getattr(_ckernels, name), inputs, args.repeat) * 1e3
        print(f"{name:<26}{py:>10.3f}{cy:>11.3f}{py / cy:>8.2f}x")


if __name__ == "__main__":
    main()
