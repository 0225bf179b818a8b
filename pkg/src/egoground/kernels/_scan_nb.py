"""Numba-jitted selective-scan kernels.

Same arithmetic as `_scan_np`, with explicit loops over contiguous
[B, T, D, N] arrays. Batches are independent, so prange over B is
deterministic (no cross-thread reductions).
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def scan_forward(dA, dBx, C):
    B, T, D, N = dA.shape
    h_all = np.empty((B, T, D, N), dtype=dA.dtype)
    y = np.empty((B, T, D), dtype=dA.dtype)
    for b in prange(B):
        h = np.zeros((D, N), dtype=dA.dtype)
        for t in range(T):
            for d in range(D):
                acc = 0.0
                for n in range(N):
                    hv = dA[b, t, d, n] * h[d, n] + dBx[b, t, d, n]
                    h[d, n] = hv
                    h_all[b, t, d, n] = hv
                    acc += hv * C[b, t, n]
                y[b, t, d] = acc
    return y, h_all


@njit(parallel=True, cache=True)
def scan_backward(dA, h_all, C, dy):
    B, T, D, N = dA.shape
    g_dA = np.empty((B, T, D, N), dtype=dA.dtype)
    g_dBx = np.empty((B, T, D, N), dtype=dA.dtype)
    g_C = np.zeros((B, T, N), dtype=dA.dtype)
    for b in prange(B):
        g = np.zeros((D, N), dtype=dA.dtype)
        for t in range(T - 1, -1, -1):
            for d in range(D):
                for n in range(N):
                    gv = g[d, n] + dy[b, t, d] * C[b, t, n]
                    g_dBx[b, t, d, n] = gv
                    if t > 0:
                        g_dA[b, t, d, n] = gv * h_all[b, t - 1, d, n]
                    else:
                        g_dA[b, t, d, n] = 0.0
                    g_C[b, t, n] += dy[b, t, d] * h_all[b, t, d, n]
                    g[d, n] = gv * dA[b, t, d, n]
    return g_dA, g_dBx, g_C
