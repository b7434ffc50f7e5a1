"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Reports the best wall time per call of ``isa_sweep`` and ``best_swap`` for a
few problem sizes, and one complete FastISA fit with each backend.
"""

import argparse
import timeit

import numpy as np

from nrsfm_isa import _kernels_py
from nrsfm_isa import isa as isa_mod
from nrsfm_isa.ica import random_orthogonal
from nrsfm_isa.synth import draw_sources, whiten_rows

try:
    from nrsfm_isa import _kernels as _compiled
except ImportError:
    _compiled = None


def best_time(fn, repeat):
    # minimum over repeats: least disturbed by other load on the machine
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_sweep(backends, repeat):
    print("isa_sweep (one fixed-point update)")
    for K, J in [(2, 300), (2, 5000), (4, 5000), (8, 20000)]:
        rng = np.random.default_rng(0)
        W = np.ascontiguousarray(random_orthogonal(3 * K, rng))
        Z = np.ascontiguousarray(rng.laplace(size=(3 * K, J)))
        times = {name: best_time(lambda m=mod: m.isa_sweep(W, Z, K, 1e-8), repeat)
                 for name, mod in backends.items()}
        _report(f"K={K:<2} J={J:<6}", times)


def bench_swap(backends, repeat):
    print("best_swap (one greedy pooling step)")
    for K in (2, 4, 8, 16, 32):
        A = np.random.default_rng(K).standard_normal((3 * K, 3 * K))
        C2 = np.ascontiguousarray((A + A.T) ** 2)
        times = {name: best_time(lambda m=mod: m.best_swap(C2, K), repeat)
                 for name, mod in backends.items()}
        _report(f"K={K:<2}", times)


def bench_fit(backends, repeat):
    print("fast_isa (10 restarts, K=2, J=5000)")
    Bp = whiten_rows(draw_sources("spherical-subspace", 2, 5000, np.random.default_rng(1)))
    saved = isa_mod.isa_sweep
    times = {}
    try:
        for name, mod in backends.items():
            isa_mod.isa_sweep = mod.isa_sweep
            times[name] = best_time(lambda: isa_mod.fast_isa(Bp, 2), max(3, repeat // 6))
    finally:
        isa_mod.isa_sweep = saved
    _report("", times)


def _report(label, times):
    parts = [f"{name} {1e3 * t:9.3f} ms" for name, t in times.items()]
    if "cython" in times:
        parts.append(f"speedup x{times['python'] / times['cython']:.2f}")
    print(f"  {label:<16} " + "   ".join(parts))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=30)
    args = ap.parse_args()
    backends = {"python": _kernels_py}
    if _compiled is None:
        print("compiled kernels not built; timing the NumPy fallback only")
    else:
        backends["cython"] = _compiled
    bench_sweep(backends, args.repeat)
    bench_swap(backends, args.repeat)
    bench_fit(backends, args.repeat)


if __name__ == "__main__":
    main()
