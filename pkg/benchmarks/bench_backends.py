"""Benchmark of the numba kernels against the pure-numpy fallback.

Times the primitives that dominate the pipeline runtime at the scale of the
shipped experiments (500-sample trajectory, depth-70 windows, 60 free
outputs) and checks that both implementations agree.  Run with

    python benchmarks/bench_backends.py

The library itself selects a backend at import time via KDEEPC_BACKEND;
this script imports both implementations directly.
"""
import time

import numpy as np

from kdeepc._accel import codes, np_impl
from kdeepc.kernels import Exponential, KernelSpec, Polynomial, Rbf, term

try:
    from kdeepc._accel import nb_impl
except ImportError:
    nb_impl = None


def timed(fn, *args, repeat=5):
    fn(*args)  # warmup (JIT compilation / cache pull)
    best = np.inf
    for _ in range(repeat):
        tic = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - tic)
    return best, out


def main():
    spec = KernelSpec(
        (
            term(0.2, Rbf(6.0)),
            term(1.0, Exponential()),
            term(0.01, Rbf(6.0), Exponential()),
            term(1.0, Polynomial(2, 1.0)),
        )
    )
    code = codes.encode(spec)
    rng = np.random.default_rng(0)
    samples = np.ascontiguousarray(rng.normal(scale=0.5, size=(500, 1)))
    queries = np.ascontiguousarray(rng.normal(scale=0.5, size=(60, 1)))
    weights = np.ascontiguousarray(rng.standard_normal(431))

    cases = [
        ("pair_eval 500x500", "pair_eval", (samples, samples)),
        ("shift_eval 60x431", "shift_eval", (queries, samples, 10, 431)),
        ("shift_grad 60x431", "shift_grad", (queries, samples, 10, 431, weights)),
        ("self_eval 500", "self_eval", (samples,)),
        ("self_grad 500", "self_grad", (samples,)),
    ]

    print(f"{'primitive':<22}{'numpy':>12}{'numba':>12}{'speedup':>10}{'max diff':>12}")
    for label, name, args in cases:
        t_np, out_np = timed(getattr(np_impl, name), *code, *args)
        if nb_impl is None:
            print(f"{label:<22}{t_np * 1e3:>10.2f}ms{'n/a':>12}{'n/a':>10}{'n/a':>12}")
            continue
        t_nb, out_nb = timed(getattr(nb_impl, name), *code, *args)
        diff = float(np.abs(np.asarray(out_np) - np.asarray(out_nb)).max())
        print(
            f"{label:<22}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms"
            f"{t_np / t_nb:>9.1f}x{diff:>12.2e}"
        )
    if nb_impl is None:
        print("numba not importable: only the numpy fallback was timed")


if __name__ == "__main__":
    main()
