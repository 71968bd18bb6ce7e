"""Compare the compiled and numpy kernel backends.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is timed on the
same inputs under both backends, outputs are checked for agreement, and a
sampled end-to-end run is timed by swapping the active backend.
"""
import argparse
import time

import numpy as np

from clocksync import kernels
from clocksync.channel import RandomDelay
from clocksync.protocols import run_sampled_batch, scenario_eddington

NAMES = ("phase_conjugate", "scale_axis", "coherence_mean", "categorical_sample")


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def cases(batch, dim, rng):
    rho = rng.normal(size=(batch, dim, dim)) + 1j * rng.normal(size=(batch, dim, dim))
    phases = rng.normal(size=(batch, dim))
    factor = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    probs = rng.random((batch, 6))
    u = rng.random(batch)

    def inplace(name, *args):
        def run(impl):
            r = rho.copy()
            getattr(impl, name)(r, *args)
            return r
        return run

    return {
        "phase_conjugate": inplace("phase_conjugate", phases),
        "scale_axis": inplace("scale_axis", factor, dim // 4, 2, 2),
        "coherence_mean": lambda impl: impl.coherence_mean(phases),
        "categorical_sample": lambda impl: impl.categorical_sample(probs, u),
    }


def end_to_end(shots, repeat):
    tl = scenario_eddington(1.0, 1.0, 3.0, channel=RandomDelay(0.5), delta=0.2)
    out = {}
    for label, impl in kernels.BACKENDS.items():
        saved = {n: getattr(kernels, n) for n in NAMES}
        for n in NAMES:
            setattr(kernels, n, getattr(impl, n))
        try:
            out[label] = best_of(lambda: run_sampled_batch(tl, shots, seed=1).rho_B.mean(axis=0), repeat)
        finally:
            for n, f in saved.items():
                setattr(kernels, n, f)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=8192)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--shots", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    print(f"active backend: {kernels.BACKEND}; available: {', '.join(kernels.BACKENDS)}")
    if "cython" not in kernels.BACKENDS:
        print("compiled kernels not built; only the numpy backend is timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}" + "".join(f"{b:>12}" for b in kernels.BACKENDS) + f"{'speedup':>10}{'max diff':>12}")
    for name, run in cases(args.batch, args.dim, rng).items():
        res = {b: best_of(lambda impl=impl: run(impl), args.repeat) for b, impl in kernels.BACKENDS.items()}
        row = f"{name:<20}" + "".join(f"{t * 1e3:>10.2f}ms" for t, _ in res.values())
        if len(res) == 2:
            diff = np.max(np.abs(res["numpy"][1] - res["cython"][1]))
            row += f"{res['numpy'][0] / res['cython'][0]:>9.1f}x{diff:>12.1e}"
        print(row)
    res = end_to_end(args.shots, max(1, args.repeat // 2))
    row = f"{'sampled run':<20}" + "".join(f"{t * 1e3:>10.2f}ms" for t, _ in res.values())
    if len(res) == 2:
        diff = np.max(np.abs(res["numpy"][1] - res["cython"][1]))
        row += f"{res['numpy'][0] / res['cython'][0]:>9.1f}x{diff:>12.1e}"
    print(row + f"  ({args.shots} shots)")


if __name__ == "__main__":
    main()
