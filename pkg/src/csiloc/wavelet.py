"""Periodized orthonormal Daubechies-4 wavelet transform for 1-D signals.

Circular (periodic) extension keeps the transform an orthogonal map on R^n
for any even n, so reconstruction is exact to rounding. Odd-length inputs are
edge-padded by one sample per level and trimmed on the way back.
"""

from __future__ import annotations

from math import comb

import numpy as np


def _daubechies_lo(p):
    """Daubechies scaling filter with p vanishing moments via spectral
    factorization of the maxflat half-band polynomial (2p taps, sum sqrt(2))."""
    w = np.array([-0.25, 0.5, -0.25])          # z * (2 - z - 1/z) / 4, low->high
    q = np.zeros(1)
    for k in range(p):
        term = np.array([1.0])
        for _ in range(k):
            term = np.convolve(term, w)
        zpow = np.zeros(p - k)
        zpow[p - 1 - k] = 1.0
        q = np.polynomial.polynomial.polyadd(q, comb(p - 1 + k, k) * np.convolve(term, zpow))
    roots = np.roots(q[::-1])
    h = np.array([1.0])
    for _ in range(p):
        h = np.convolve(h, [1.0, 1.0])
    for r in roots:
        if abs(r) < 1.0:
            h = np.convolve(h, [1.0, -r])
    h = np.real(h)
    return h * np.sqrt(2.0) / h.sum()


# Daubechies-4 filter pair (8 taps), orthonormal to machine precision.
DB4_LO = _daubechies_lo(4)
DB4_HI = ((-1.0) ** np.arange(8)) * DB4_LO[::-1]


def _analyze(x):
    n = x.size
    half = n // 2
    a = np.zeros(half)
    d = np.zeros(half)
    for m in range(DB4_LO.size):
        idx = (2 * np.arange(half) + m) % n
        a += DB4_LO[m] * x[idx]
        d += DB4_HI[m] * x[idx]
    return a, d


def _synthesize(a, d):
    half = a.size
    n = 2 * half
    x = np.zeros(n)
    for m in range(DB4_LO.size):
        idx = (2 * np.arange(half) + m) % n
        np.add.at(x, idx, DB4_LO[m] * a + DB4_HI[m] * d)
    return x


def wavedec(x, levels=3):
    """Multi-level decomposition.

    Returns (approx, details, pads) with details ordered finest first; pads
    records the per-level odd-length edge padding needed by waverec.
    """
    x = np.asarray(x, dtype=np.float64)
    approx = x
    details = []
    pads = []
    for _ in range(levels):
        if approx.size < 4:
            break
        if approx.size % 2:
            approx = np.concatenate([approx, approx[-1:]])
            pads.append(True)
        else:
            pads.append(False)
        approx, d = _analyze(approx)
        details.append(d)
    return approx, details, pads


def waverec(approx, details, pads):
    x = approx
    for d, padded in zip(reversed(details), reversed(pads)):
        x = _synthesize(x, d)
        if padded:
            x = x[:-1]
    return x
