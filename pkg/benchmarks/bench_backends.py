"""Benchmark the numba-compiled receiver kernels against the pure-Python path.

Runs each hot loop (AGC, Gardner timing recovery, decision-directed PLL) on a
representative 400 ksps QPSK capture and prints per-call times and speedups.

Usage:
    python benchmarks/bench_backends.py [--samples N] [--repeat R]
"""

import argparse
import math
import time

import numpy as np

from cavitylink import _kernels
from cavitylink.rxchain import AGC_STEP, AGC_WINDOW
from cavitylink.txchain import ModemParams, pulse_shape, qpsk_modulate, rrc_taps


def build_inputs(n_samples: int):
    rng = np.random.default_rng(0)
    p = ModemParams()
    n_sym = max(64, n_samples // p.samples_per_symbol)
    wf = pulse_shape(qpsk_modulate(rng.integers(0, 2, 2 * n_sym)), p).samples
    wf = wf + 0.05 * (rng.standard_normal(wf.size) + 1j * rng.standard_normal(wf.size))
    matched = np.convolve(wf, rrc_taps(p)) / math.sqrt(p.samples_per_symbol * 0.25)
    symbols = matched[p.filter_span_symbols * p.samples_per_symbol :: p.samples_per_symbol]
    symbols = np.ascontiguousarray(symbols)
    return wf, matched, symbols


def timeit(fn, repeat: int) -> float:
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=400_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    wf, matched, symbols = build_inputs(args.samples)

    cases = {
        "agc_loop": lambda impl: impl(wf, 1.0, 1000.0, AGC_STEP, AGC_WINDOW, AGC_WINDOW),
        "gardner_loop": lambda impl: impl(matched, 4.0, 0.03, 1e-4, 8.0),
        "pll_loop": lambda impl: impl(symbols, 0.02, 2e-4),
    }
    pure = {
        "agc_loop": _kernels._agc_loop,
        "gardner_loop": _kernels._gardner_loop,
        "pll_loop": _kernels._pll_loop,
    }

    compiled = None
    if _kernels.BACKEND == "numba":
        compiled = {
            "agc_loop": _kernels.agc_loop,
            "gardner_loop": _kernels.gardner_loop,
            "pll_loop": _kernels.pll_loop,
        }
        _kernels.warmup()
    else:
        try:
            from numba import njit

            compiled = {
                "agc_loop": njit(cache=True)(_kernels._agc_loop),
                "gardner_loop": njit(cache=True)(_kernels._gardner_loop),
                "pll_loop": njit(cache=True)(_kernels._pll_loop),
            }
            for name, case in cases.items():
                case(compiled[name])  # compile outside the timed region
        except ImportError:
            print("numba unavailable; timing the pure path only\n")

    print(f"{args.samples} waveform samples, best of {args.repeat} runs\n")
    header = f"{'kernel':<14}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, case in cases.items():
        t_pure = timeit(lambda: case(pure[name]), args.repeat)
        if compiled is not None:
            t_fast = timeit(lambda: case(compiled[name]), args.repeat)
            print(
                f"{name:<14}{1e3 * t_pure:>12.1f}{1e3 * t_fast:>12.2f}"
                f"{t_pure / t_fast:>9.0f}x"
            )
        else:
            print(f"{name:<14}{1e3 * t_pure:>12.1f}{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
