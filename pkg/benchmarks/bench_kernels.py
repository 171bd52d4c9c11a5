"""Time the compiled and pure-Python kernels on a simulated trial.

    python3 benchmarks/bench_kernels.py [--n 100] [--T 100] [--delta 10] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from pdemee import kernels
from pdemee.core import build_proximal_outcomes, compute_weights
from pdemee.simgen import GenerativeConfig, generate_trial


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--T", type=int, default=100)
    ap.add_argument("--delta", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    data = generate_trial(GenerativeConfig(n=args.n, T=args.T, delta=args.delta), 0)
    out = build_proximal_outcomes(data.sub_outcome, data.delta, lengths=data.lengths)
    w = compute_weights(data, out)
    weight_args = (data.treatment, data.rand_prob, data.availability, out.first_hit,
                   data.lengths, data.delta - 1, True)
    ee_args = (data.controls, data.moderators, data.treatment, out.y, w.ptilde, w.m * w.w_pd,
               np.array([-1.0, 0.1]), np.array([0.2, 0.1]))

    print(f"n={args.n} T={args.T} delta={args.delta}; backends: {kernels.available_backends()}")
    print(f"{'kernel':<22}{'backend':<10}{'ms/call':>10}")
    timings = {}
    for backend in kernels.available_backends():
        cases = {
            "window_weights": lambda: kernels.window_weights(*weight_args, backend=backend),
            "ee_accumulate": lambda: kernels.ee_accumulate(*ee_args, want_jacobian=True,
                                                           want_leverage=True, backend=backend),
        }
        for name, call in cases.items():
            best = min(timeit.repeat(call, number=1, repeat=args.repeat)) * 1e3
            timings[name, backend] = best
            print(f"{name:<22}{backend:<10}{best:>10.3f}")
    if ("ee_accumulate", "cython") in timings:
        for name in ("window_weights", "ee_accumulate"):
            print(f"speed-up {name}: {timings[name, 'python'] / timings[name, 'cython']:.1f}x")


if __name__ == "__main__":
    main()
