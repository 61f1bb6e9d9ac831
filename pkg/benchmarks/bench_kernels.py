"""Compare the compiled kernels with the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is timed on a
workload shaped like the experiments (80-lane banks, 16-candidate detection).
"""

import argparse
import timeit

import numpy as np

from taskquant import _kernels_py
from taskquant.quantizer import init_soft_params

try:
    from taskquant import _kernels
except ImportError:
    _kernels = None


def workloads(rng):
    q = init_soft_params(16, slope_factor=2.0)
    z = rng.normal(size=(128, 80))
    g = rng.normal(size=(128, 80))
    x = rng.normal(size=(20000, 12))
    means = rng.normal(size=(16, 12))
    t = np.array([-1.0, 0.0, 1.0])
    cells = np.searchsorted(t, x)
    lower = np.concatenate(([-np.inf], t))[cells]
    upper = np.concatenate((t, [np.inf]))[cells]
    return {
        "soft_quantize_forward": lambda k: k.soft_quantize_forward(z, q.amplitudes, q.shifts, q.slopes),
        "soft_quantize_backward": lambda k: k.soft_quantize_backward(z, g, q.amplitudes, q.shifts, q.slopes),
        "cell_loglik": lambda k: k.cell_loglik(lower[:2000], upper[:2000], means, 0.5),
        "nearest_candidate": lambda k: k.nearest_candidate(x, means),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = [("python", _kernels_py)] + ([("cython", _kernels)] if _kernels else [])
    print(f"{'kernel':<24}" + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    for name, fn in workloads(rng).items():
        times = []
        for _, mod in backends:
            fn(mod)
            number = 5
            times.append(min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number)
        speed = f"{times[0] / times[1]:>9.2f}x" if len(times) > 1 else ""
        print(f"{name:<24}" + "".join(f"{t * 1e3:>10.3f}ms" for t in times) + speed)
    if _kernels is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
