"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Prints per-call timings for each kernel and the speed-up of the compiled
backend. The compiled column is absent when the extension was not built.
"""
import argparse
import timeit

import numpy as np

from pcat import _kernels


def cases(rng):
    yield "nearest_segment n=64", "nearest_segment", lambda: (
        np.ascontiguousarray(np.cumsum(rng.uniform(-20, 20, (64, 2)), axis=0)), 3.0, -7.0)
    yield "nearest_segment n=512", "nearest_segment", lambda: (
        np.ascontiguousarray(np.cumsum(rng.uniform(-20, 20, (512, 2)), axis=0)), 3.0, -7.0)
    yield "best_split n=200", "best_split", lambda: (
        np.sort(rng.uniform(0, 30, 200)), rng.normal(size=200), 4)
    yield "best_split n=2000", "best_split", lambda: (
        np.sort(rng.uniform(0, 30, 2000)), rng.normal(size=2000), 4)


def bench(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = [("numpy", _kernels.python)]
    if _kernels.compiled is not None:
        backends.append(("compiled", _kernels.compiled))
    header = f"{'kernel':<24}" + "".join(f"{name:>14}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speed-up':>10}"
    print(header)
    for label, attr, make in cases(rng):
        call_args = make()
        times = [bench(getattr(mod, attr), call_args, args.repeat) for _, mod in backends]
        line = f"{label:<24}" + "".join(f"{t * 1e6:>11.2f} us" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
