"""Compiled loops for the selective scan (forward and backward).

Both kernels recompute the discretized coefficients on the fly instead of
materializing (B, L, Di, N) temporaries.  Only the hidden states are kept
for the backward pass.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def scan_forward(x, delta, A, Bm, Cm, D):
    nb, L, di = x.shape
    n = A.shape[1]
    hs = np.zeros((nb, di, L + 1, n))
    y = np.empty((nb, L, di))
    for b in range(nb):
        for d in range(di):
            for t in range(L):
                dt = delta[b, t, d]
                xt = x[b, t, d]
                acc = 0.0
                for k in range(n):
                    q = 0.5 * dt * A[d, k]
                    den = 1.0 - q
                    h = (1.0 + q) / den * hs[b, d, t, k] + dt * Bm[b, t, k] / den * xt
                    hs[b, d, t + 1, k] = h
                    acc += Cm[b, t, k] * h
                y[b, t, d] = acc + D[d] * xt
    return y, hs


@njit(cache=True)
def scan_backward(gy, x, delta, A, Bm, Cm, D, hs):
    nb, L, di = x.shape
    n = A.shape[1]
    gx = np.empty((nb, L, di))
    gdelta = np.empty((nb, L, di))
    gA = np.zeros((di, n))
    gB = np.zeros((nb, L, n))
    gC = np.zeros((nb, L, n))
    gD = np.zeros(di)
    dh = np.empty(n)
    for b in range(nb):
        for d in range(di):
            for k in range(n):
                dh[k] = 0.0
            for t in range(L - 1, -1, -1):
                g = gy[b, t, d]
                dt = delta[b, t, d]
                xt = x[b, t, d]
                gD[d] += g * xt
                gx_acc = g * D[d]
                gd_acc = 0.0
                for k in range(n):
                    gC[b, t, k] += g * hs[b, d, t + 1, k]
                    dhk = dh[k] + g * Cm[b, t, k]
                    q = 0.5 * dt * A[d, k]
                    den = 1.0 - q
                    bk = Bm[b, t, k]
                    gx_acc += dhk * dt * bk / den
                    g_bbar = dhk * xt
                    inv2 = 1.0 / (den * den)
                    gq = dhk * hs[b, d, t, k] * 2.0 * inv2 + g_bbar * dt * bk * inv2
                    gd_acc += gq * 0.5 * A[d, k] + g_bbar * bk / den
                    gA[d, k] += gq * 0.5 * dt
                    gB[b, t, k] += g_bbar * dt / den
                    dh[k] = dhk * (1.0 + q) / den
                gx[b, t, d] = gx_acc
                gdelta[b, t, d] = gd_acc
    return gx, gdelta, gA, gB, gC, gD
