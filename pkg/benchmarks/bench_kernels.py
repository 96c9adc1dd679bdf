"""Time the compiled and numpy Monte-Carlo kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--realizations 16] [--repeat 3]
"""

import argparse
import time

import numpy as np

from refocus import montecarlo, noise, pulses
from refocus.kernels import get_kernel


def setup(n_real, tau0=16.0, T=256.0):
    wf = pulses.build_sequence("8c", pulses.gaussian_pulse(0.05))
    model = noise.NoiseModel(0.0355, tau0, ("x",), T)
    full, _, rec, ev_s, ev_q, u0 = montecarlo._prepare(wf, model, wf.dt, None)
    paths = noise.synthesize_batch(model, full.dt, range(n_real))
    return (np.ascontiguousarray(full.samples), np.ascontiguousarray(paths), full.dt, ev_s, ev_q, rec, u0)


def bench(name, args, repeat):
    run = get_kernel(name)
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = run(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--realizations", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    args = setup(a.realizations)
    steps = args[1].shape[0] * args[1].shape[1]
    results = {}
    for name in ("compiled", "python"):
        try:
            t, out = bench(name, args, a.repeat)
        except ImportError:
            print(f"{name:9s} unavailable")
            continue
        results[name] = out
        print(f"{name:9s} {t:8.3f} s  {steps / t / 1e6:8.2f} Msteps/s")
    if len(results) == 2:
        diff = np.abs(results["compiled"] - results["python"]).max()
        print(f"max |cos phi difference| = {diff:.2e}")


if __name__ == "__main__":
    main()
