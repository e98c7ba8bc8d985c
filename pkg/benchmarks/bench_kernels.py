"""Time the compiled kernels against the numpy fallback on representative workloads.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-N wall time of each backend and the
speed-up. Exits non-zero if the compiled extension is missing.
"""

import argparse
import sys
import timeit

import numpy as np

from chaosid import _fallback
from chaosid.dynamics import lorenz63_quadratic


def workloads(rng):
    A, B, b = lorenz63_quadratic()
    batch = rng.normal(size=(50, 3)) * 5 + np.array([0.0, 0.0, 25.0])
    x0 = np.array([8.0, 0.0, 30.0])
    # LSTM recurrence at the VODEN size: hidden 20, T = 4000
    H, T = 20, 4000
    gx = rng.normal(size=(T, 4 * H)) * 0.5
    Whh = rng.normal(size=(4 * H, H)) * 0.2
    return {
        "quad_rk4 (50 members, 8 substeps)": lambda m: m.quad_rk4(A, B, b, batch, 0.01, 8),
        "quad_rk4_orbit (10000 steps)": lambda m: m.quad_rk4_orbit(A, B, b, x0, 0.01, 1, 10000),
        "lstm_recurrence_forward (T=4000, H=20)": lambda m: m.lstm_recurrence_forward(gx, Whh, False),
        "lstm forward + backward (T=4000, H=20)": _backward(gx, Whh),
    }


def _backward(gx, Whh):
    def run(m):
        H_, C, G = m.lstm_recurrence_forward(gx, Whh, False)
        return m.lstm_recurrence_backward(np.ones_like(H_), G, C, Whh, False)
    return run


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    try:
        from chaosid import _kernels
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':42s} {'compiled':>11s} {'python':>11s} {'speed-up':>9s}")
    for name, fn in workloads(rng).items():
        times = {}
        for label, mod in (("compiled", _kernels), ("python", _fallback)):
            fn(mod)  # warm-up
            times[label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        ratio = times["python"] / times["compiled"]
        print(f"{name:42s} {times['compiled'] * 1e3:9.2f}ms {times['python'] * 1e3:9.2f}ms {ratio:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
