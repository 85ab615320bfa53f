"""Compiled vs numpy kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on inputs shaped like the production calls (chaos Monte
Carlo batches and Hoelder increment sums) and the outputs of the two
backends are compared before timing.
"""
import argparse
import timeit

import numpy as np

from pamlab import _backend


def chol_inputs(rng, batch=4096, k=3, d=1):
    m = rng.standard_normal((batch, k, k))
    A = m @ np.swapaxes(m, -1, -2) + k * np.eye(k)
    g = rng.standard_normal((batch, k, d))
    return A, g


def incr_inputs(rng, rows=256, n=1024):
    return rng.standard_normal((rows, n)), rng.standard_normal((rows, n))


CASES = {
    "chol_solve_batch k=3": lambda rng: ("chol_solve_batch", chol_inputs(rng, k=3)),
    "chol_solve_batch k=6": lambda rng: ("chol_solve_batch", chol_inputs(rng, k=6)),
    "increment_power_sums p=2": lambda rng: ("increment_power_sums", incr_inputs(rng) + (7, 2, 256, 768)),
    "increment_power_sums p=4": lambda rng: ("increment_power_sums", incr_inputs(rng) + (7, 4, 256, 768)),
    "increment_power_sums single": lambda rng: ("increment_power_sums", (incr_inputs(rng)[0], None, 7, 2, 256, 768)),
}


def best_time(fn, args, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-6)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = _backend.available()
    print(f"backends: {', '.join(backends)}")
    print(f"{'kernel':32s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup  max|diff|")
    for label, make in CASES.items():
        name, inputs = make(np.random.default_rng(0))
        times, outs = {}, {}
        for b in backends:
            with _backend.use_backend(b):
                fn = getattr(_backend.kernels(), name)
                outs[b] = fn(*inputs)
                times[b] = best_time(fn, inputs, args.repeat)
        diff = 0.0
        if len(backends) > 1:
            a, c = outs["python"], outs["cython"]
            pairs = zip(a, c) if isinstance(a, tuple) else [(a, c)]
            diff = max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in pairs)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:32s} " + " ".join(f"{times[b] * 1e3:10.3f}ms" for b in backends)
              + f"   {speed:6.2f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
