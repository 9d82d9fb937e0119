"""Sample-rate feedback loops: AGC, Gardner timing recovery, decision-directed PLL.

These three loops are the only per-sample Python iteration in the package and
dominate runtime, so they are compiled with numba by default. Set
CAVITYLINK_BACKEND=numpy to run the identical pure-Python implementations
instead (or =numba to fail loudly when numba is missing). The selected
backend name is exposed as BACKEND; benchmarks/bench_backends.py compares the
two paths.
"""

from __future__ import annotations

import math
import os

import numpy as np


def _interp_cubic(x, p):
    # 4-point Lagrange interpolation at fractional position p; exact at mu = 0.
    i = int(p)
    mu = p - i
    ym1 = x[i - 1]
    y0 = x[i]
    y1 = x[i + 1]
    y2 = x[i + 2]
    lm1 = -mu * (mu - 1.0) * (mu - 2.0) / 6.0
    l0 = (mu + 1.0) * (mu - 1.0) * (mu - 2.0) / 2.0
    l1 = -(mu + 1.0) * mu * (mu - 2.0) / 2.0
    l2 = (mu + 1.0) * mu * (mu - 1.0) / 6.0
    return ym1 * lm1 + y0 * l0 + y1 * l1 + y2 * l2


def _agc_loop(x, target_power, max_lin_gain, step, window, head_skip):
    # Logarithmic feedback loop: y = x * exp(g), g driven by the log-power
    # error of a one-pole window estimate; exp(g) clamped to max_lin_gain.
    n = x.shape[0]
    y = np.empty(n, dtype=np.complex128)
    gains = np.empty(n, dtype=np.float64)
    log_target = math.log(target_power)
    g_max = math.log(max_lin_gain)
    alpha = 1.0 / window
    # Feedforward start: seed the loop from an early stretch of the input so
    # the first frame is already near target. head_skip keeps the estimate
    # clear of any pulse-shaping ramp at the capture head.
    skip = head_skip if head_skip + 4 * window <= n else 0
    head = 4 * window if skip + 4 * window <= n else n - skip
    p0 = 0.0
    for i in range(skip, skip + head):
        p0 += x[i].real * x[i].real + x[i].imag * x[i].imag
    p0 /= head
    if p0 > 0.0:
        g = 0.5 * (log_target - math.log(p0))
    else:
        g = g_max
    if g > g_max:
        g = g_max
    p_est = target_power
    for i in range(n):
        amp = math.exp(g)
        yi = x[i] * amp
        y[i] = yi
        gains[i] = amp
        if i < skip:
            # Ramp samples would drag the power estimate toward zero.
            continue
        p = yi.real * yi.real + yi.imag * yi.imag
        p_est = (1.0 - alpha) * p_est + alpha * p
        if i < skip + window:
            # Hold the feedforward gain until the power estimate has real data
            # in it; reacting to a partially filled window just rings.
            continue
        g -= 0.5 * step * (math.log(p_est + 1e-300) - log_target)
        if g > g_max:
            g = g_max
    return y, gains


def _gardner_loop(x, sps, k1, k2, start):
    # Gardner TED driving a second-order loop with cubic interpolation.
    # Emits one sample per symbol starting from position `start`.
    n = x.shape[0]
    nom = float(sps)
    half = 0.5 * nom
    max_out = int((n - start) / nom) + 2
    out = np.empty(max_out, dtype=np.complex128)
    p = float(start)
    vi = 0.0
    prev = 0.0 + 0.0j
    count = 0
    v_lim = 0.25 * nom
    while p + nom + 3.0 < n and count < max_out:
        curr = _interp_cubic(x, p)
        mid = _interp_cubic(x, p - half)
        e = mid.real * (prev.real - curr.real) + mid.imag * (prev.imag - curr.imag)
        vi += k2 * e
        v = k1 * e + vi
        if v > v_lim:
            v = v_lim
        elif v < -v_lim:
            v = -v_lim
        out[count] = curr
        count += 1
        prev = curr
        p += nom + v
    return out, count


def _pll_loop(z, k1, k2):
    # Decision-directed QPSK phase loop (proportional + integrator).
    # Output is the derotated symbol stream; decisions are diagonal points.
    n = z.shape[0]
    out = np.empty(n, dtype=np.complex128)
    phase = 0.0
    integ = 0.0
    s = 0.7071067811865476
    for i in range(n):
        c = math.cos(phase)
        sn = math.sin(phase)
        zr = z[i].real
        zi = z[i].imag
        yr = zr * c + zi * sn
        yi = -zr * sn + zi * c
        out[i] = complex(yr, yi)
        dr = s if yr >= 0.0 else -s
        di = s if yi >= 0.0 else -s
        e = math.atan2(yi * dr - yr * di, yr * dr + yi * di)
        integ += k2 * e
        phase += k1 * e + integ
    return out


def _resolve_backend() -> str:
    choice = os.environ.get("CAVITYLINK_BACKEND", "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        import numba  # noqa: F401  (fail loudly if forced but absent)

        return "numba"
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


BACKEND = _resolve_backend()

if BACKEND == "numba":
    from numba import njit

    _interp_cubic = njit(cache=True)(_interp_cubic)
    agc_loop = njit(cache=True)(_agc_loop)
    gardner_loop = njit(cache=True)(_gardner_loop)
    pll_loop = njit(cache=True)(_pll_loop)
else:
    agc_loop = _agc_loop
    gardner_loop = _gardner_loop
    pll_loop = _pll_loop


def warmup() -> str:
    """Trigger compilation (no-op on the numpy path); returns the backend name."""
    x = np.ones(64, dtype=np.complex128)
    agc_loop(x, 1.0, 10.0, 0.02, 32, 0)
    gardner_loop(x, 4.0, 0.01, 0.0001, 8.0)
    pll_loop(x[:16], 0.01, 0.0001)
    return BACKEND
