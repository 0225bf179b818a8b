"""Pure-numpy reference path for the selective-scan recurrence.

Vectorized over (batch, channel, state); the time loop stays in Python.
This is the fallback when numba is unavailable or disabled, and the
reference the jitted kernels are tested against.
"""

from __future__ import annotations

import numpy as np


def scan_forward(dA: np.ndarray, dBx: np.ndarray, C: np.ndarray):
    """h_t = dA_t * h_{t-1} + dBx_t;  y_t[d] = sum_n h_t[d, n] * C_t[n].

    dA, dBx: [B, T, D, N];  C: [B, T, N].  Returns y [B, T, D] and the
    per-step hidden states h [B, T, D, N] for the backward pass.
    """
    B, T, D, N = dA.shape
    h = np.zeros((B, D, N), dtype=dA.dtype)
    h_all = np.empty((B, T, D, N), dtype=dA.dtype)
    y = np.empty((B, T, D), dtype=dA.dtype)
    for t in range(T):
        h = dA[:, t] * h + dBx[:, t]
        h_all[:, t] = h
        y[:, t] = np.einsum("bdn,bn->bd", h, C[:, t])
    return y, h_all


def scan_backward(dA: np.ndarray, h_all: np.ndarray, C: np.ndarray, dy: np.ndarray):
    """Adjoint of scan_forward; returns gradients for (dA, dBx, C)."""
    B, T, D, N = dA.shape
    g = np.zeros((B, D, N), dtype=dA.dtype)
    g_dA = np.empty_like(dA)
    g_dBx = np.empty_like(dA)
    for t in range(T - 1, -1, -1):
        g = g + dy[:, t, :, None] * C[:, t, None, :]
        g_dBx[:, t] = g
        if t > 0:
            g_dA[:, t] = g * h_all[:, t - 1]
        else:
            g_dA[:, t] = 0.0
        g = g * dA[:, t]
    g_C = np.einsum("btd,btdn->btn", dy, h_all)
    return g_dA, g_dBx, g_C
