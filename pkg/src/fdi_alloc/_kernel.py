"""Compiled RK4 integration for the common scenario family.

Covers quadratic costs, built-in drifts, and Zero/Sinusoid attack signals.
Flat state layout matches ``AgentState.flat()`` followed by
``ObserverState.flat()``. Anything outside this family runs through the
generic Python right-hand sides in ``algorithms``.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

MODE_CODES = {"nominal": 0, "compromised": 1, "resilient_linear": 2, "resilient_nonlinear": 2}
DRIFT_CODES = {"zero": 0, "sin": 1, "linear": 2}


@njit(cache=True)
def _shape(e, kind, alpha, delta):
    if kind == 0:
        return e
    ae = abs(e)
    if ae <= delta:
        return e * delta ** (alpha - 1.0)
    return ae**alpha * (1.0 if e > 0 else -1.0)


@njit(cache=True)
def _deriv(t, y, out, mode, N, n, lap, agg, b, c, d, drift_kind, drift_gain,
           amp, freq, phase, g1, g2, h1k, h1a, h1d, h2k, h2a, h2d, clamp):
    P = N * n
    la = np.zeros(N)
    za = np.zeros(N)
    ua = np.zeros(N)
    if mode >= 1:
        for j in range(N):
            ua[j] = amp[0, j] * math.cos(freq[0, j] * t + phase[0, j])
            la[j] = amp[1, j] * math.cos(freq[1, j] * t + phase[1, j])
            za[j] = amp[2, j] * math.cos(freq[2, j] * t + phase[2, j])
    for i in range(N):
        k3 = 0.0
        mz = 0.0
        if mode >= 1:
            for j in range(N):
                k3 += agg[i, j] * la[j]
                mz += agg[i, j] * za[j]
        k2 = -k3 - mz
        for k in range(n):
            x = y[i * n + k]
            lam = y[P + i * n + k]
            z = y[2 * P + i * n + k]
            llam = 0.0
            lz = 0.0
            for j in range(N):
                llam += lap[i, j] * y[P + j * n + k]
                lz += lap[i, j] * y[2 * P + j * n + k]
            bx = -(b[i] + 2.0 * c[i] * x) - lam
            bl = -llam - lz + x - d[i, k]
            bz = llam
            if mode == 0:
                out[i * n + k] = bx
                out[P + i * n + k] = bl
                out[2 * P + i * n + k] = bz
            elif mode == 1:
                out[i * n + k] = bx + ua[i]
                out[P + i * n + k] = bl + k2
                out[2 * P + i * n + k] = bz + k3
            else:
                base_gh = 3 * P + i * 3 * n
                base_kh = 6 * P + i * 3 * n
                kh1 = min(max(y[base_kh + k], -clamp), clamp)
                kh2 = min(max(y[base_kh + n + k], -clamp), clamp)
                kh3 = min(max(y[base_kh + 2 * n + k], -clamp), clamp)
                if drift_kind == 1:
                    gx = drift_gain * math.sin(x)
                elif drift_kind == 2:
                    gx = drift_gain * x
                else:
                    gx = 0.0
                out[i * n + k] = gx + bx + ua[i] - kh1
                out[P + i * n + k] = bl + k2 - kh2
                out[2 * P + i * n + k] = bz + k3 - kh3
                meas = (x, lam, z)
                uio = (bx - kh1, bl - kh2, bz - kh3)
                khs = (kh1, kh2, kh3)
                for blk in range(3):
                    e = meas[blk] - y[base_gh + blk * n + k]
                    out[base_gh + blk * n + k] = khs[blk] + uio[blk] + g1 * _shape(e, h1k, h1a, h1d)
                    out[base_kh + blk * n + k] = g2 * _shape(e, h2k, h2a, h2d)


@njit(cache=True)
def integrate(y0, records, mode, N, n, lap, agg, b, c, d, drift_kind, drift_gain,
              amp, freq, phase, g1, g2, h1k, h1a, h1d, h2k, h2a, h2d, clamp,
              dt, n_steps, stride, threshold):
    """Fixed-step RK4; returns (samples written, diverged step or -1)."""
    S = y0.size
    y = y0.copy()
    k1 = np.empty(S)
    k2 = np.empty(S)
    k3 = np.empty(S)
    k4 = np.empty(S)
    tmp = np.empty(S)
    records[0, :] = y
    rec = 1
    h = 0.5 * dt
    for step in range(n_steps):
        t = step * dt
        _deriv(t, y, k1, mode, N, n, lap, agg, b, c, d, drift_kind, drift_gain,
               amp, freq, phase, g1, g2, h1k, h1a, h1d, h2k, h2a, h2d, clamp)
        for s in range(S):
            tmp[s] = y[s] + h * k1[s]
        _deriv(t + h, tmp, k2, mode, N, n, lap, agg, b, c, d, drift_kind, drift_gain,
               amp, freq, phase, g1, g2, h1k, h1a, h1d, h2k, h2a, h2d, clamp)
        for s in range(S):
            tmp[s] = y[s] + h * k2[s]
        _deriv(t + h, tmp, k3, mode, N, n, lap, agg, b, c, d, drift_kind, drift_gain,
               amp, freq, phase, g1, g2, h1k, h1a, h1d, h2k, h2a, h2d, clamp)
        for s in range(S):
            tmp[s] = y[s] + dt * k3[s]
        _deriv(t + dt, tmp, k4, mode, N, n, lap, agg, b, c, d, drift_kind, drift_gain,
               amp, freq, phase, g1, g2, h1k, h1a, h1d, h2k, h2a, h2d, clamp)
        bad = False
        for s in range(S):
            y[s] = y[s] + (dt / 6.0) * (k1[s] + 2.0 * k2[s] + 2.0 * k3[s] + k4[s])
            if not (abs(y[s]) <= threshold):
                bad = True
        if bad:
            return rec, step
        if (step + 1) % stride == 0 or step + 1 == n_steps:
            records[rec, :] = y
            rec += 1
    return rec, -1
