"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints best-of-N wall time per call and the speed-up for each kernel.
"""
import argparse
import timeit

import numpy as np

from floodlag import kernels
from floodlag.synth import simulate_panel


def _star(n=40, radius=2500.0, seed=0):
    rng = np.random.default_rng(seed)
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    rad = radius * rng.uniform(0.6, 1.0, n)
    return np.c_[3000 + rad * np.cos(ang), -3000 + rad * np.sin(ang)]


def cases():
    ring = [_star()]
    panel, truth = simulate_panel(500, np.full(5, 0.03), seed=1, n_covariates=8, baseline=20.0)
    yield ("coverage_block 24x24, 40-gon",
           lambda b: kernels.coverage_block(ring, 0.0, 0.0, 250.0, 0, 24, 0, 24, backend=b))
    yield ("cond_poisson_derivs 500 strata x 15, 13 cols",
           lambda b: kernels.cond_poisson_derivs(panel.X, panel.y, panel.offset, panel.ptr, truth, backend=b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the python backend only")
    for label, fn in cases():
        times = {}
        for b in backends:
            number = 3
            times[b] = min(timeit.repeat(lambda: fn(b), number=number, repeat=args.repeat)) / number
        line = "  ".join(f"{b} {1e3 * t:9.3f} ms" for b, t in times.items())
        if len(times) == 2:
            line += f"  speed-up {times['python'] / times['cython']:6.1f}x"
        print(f"{label:48s} {line}")


if __name__ == "__main__":
    main()
