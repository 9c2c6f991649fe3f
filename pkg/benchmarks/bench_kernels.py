"""Timing comparison between the compiled and NumPy kernel backends.

Run as ``python benchmarks/bench_kernels.py [--size N] [--angles K]``.
Both backends are exercised through the same chunk interface the package
uses at runtime, on identical inputs, and the outputs are cross-checked
so a speedup never hides a numerical regression.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from rmirt.kernels import _reference

try:
    from rmirt.kernels import _native
except ImportError:
    _native = None


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(size: int, n_angles: int, repeats: int) -> None:
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(size, size))
    angles = np.linspace(0.0, np.pi, n_angles, endpoint=False)
    cos_a, sin_a = np.cos(angles), np.sin(angles)
    n_det = int(1.5 * size)
    sino = rng.uniform(size=(n_angles, n_det))
    inv = np.array([[1.02, 0.08], [-0.05, 0.97]])
    shift = np.array([0.4, -0.7])

    backends = [("reference", _reference)]
    if _native is not None:
        backends.append(("native", _native))

    cases = []

    def forward(mod):
        out = np.empty((n_angles, n_det))
        mod.forward_chunk(img, cos_a, sin_a, 1.0, 1.0, out)
        return out

    def adjoint(mod):
        out = np.zeros((size, size))
        mod.adjoint_chunk(sino, cos_a, sin_a, 1.0, 1.0, out)
        return out

    def pull(mod):
        out = np.empty((size, size))
        mod.pull_chunk(img, inv, shift, 0, out)
        return out

    def splat(mod):
        out = np.zeros((size, size))
        mod.splat_chunk(img, inv, shift, 0, out)
        return out

    def grad(mod):
        gr = np.empty((size, size))
        gc = np.empty((size, size))
        mod.grad_chunk(img, inv, shift, 0, gr, gc)
        return gr

    cases = [("forward_chunk", forward), ("adjoint_chunk", adjoint),
             ("pull_chunk", pull), ("splat_chunk", splat),
             ("grad_chunk", grad)]

    print(f"image {size}x{size}, {n_angles} angles, {n_det} detectors, "
          f"best of {repeats}")
    header = f"{'kernel':<14}" + "".join(f"{name:>12}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for label, fn in cases:
        times = []
        results = []
        for _, mod in backends:
            times.append(_time(lambda: fn(mod), repeats))
            results.append(fn(mod))
        if len(results) == 2:
            worst = float(np.max(np.abs(results[0] - results[1])))
            if worst > 1e-9:
                raise SystemExit(
                    f"{label}: backends disagree by {worst:.2e}")
        line = f"{label:<14}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:>9.1f}x"
        print(line)
    if _native is None:
        print("compiled backend not built; reference timings only")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--angles", type=int, default=180)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    bench(args.size, args.angles, args.repeats)


if __name__ == "__main__":
    main()
