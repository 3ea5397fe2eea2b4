"""Sequential selective-scan kernels (forward and reverse).

Shapes: x, delta (B, L, C); A (C, N); Bm, Cm (B, L, N); D (C,).
The recurrence per batch item and channel c, state n:

    h[t] = exp(delta[t, c] * A[c, n]) * h[t-1] + delta[t, c] * Bm[t, n] * x[t, c]
    y[t, c] = sum_n Cm[t, n] * h[t, c, n] + D[c] * x[t, c]
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def scan_forward(x, delta, A, Bm, Cm, D, keep_states):
    nb, length, nc = x.shape
    ns = A.shape[1]
    y = np.empty_like(x)
    if keep_states:
        hs = np.empty((nb, length, nc, ns), dtype=x.dtype)
    else:
        hs = np.empty((0, 0, 0, 0), dtype=x.dtype)
    h = np.zeros((nc, ns), dtype=x.dtype)
    for b in range(nb):
        h[:, :] = 0
        for t in range(length):
            for c in range(nc):
                d = delta[b, t, c]
                xv = x[b, t, c]
                dx = d * xv
                acc = 0.0
                for n in range(ns):
                    hv = np.exp(d * A[c, n]) * h[c, n] + dx * Bm[b, t, n]
                    h[c, n] = hv
                    acc += Cm[b, t, n] * hv
                y[b, t, c] = acc + D[c] * xv
            if keep_states:
                hs[b, t] = h
    return y, hs


@njit(cache=True, fastmath=True)
def scan_backward(gy, x, delta, A, Bm, Cm, D, hs):
    nb, length, nc = x.shape
    ns = A.shape[1]
    gx = np.zeros_like(x)
    gdelta = np.zeros_like(delta)
    gA = np.zeros_like(A)
    gB = np.zeros_like(Bm)
    gC = np.zeros_like(Cm)
    gD = np.zeros_like(D)
    gh = np.zeros((nc, ns), dtype=x.dtype)
    for b in range(nb):
        gh[:, :] = 0
        for t in range(length - 1, -1, -1):
            for c in range(nc):
                d = delta[b, t, c]
                xv = x[b, t, c]
                g = gy[b, t, c]
                gD[c] += g * xv
                gxv = g * D[c]
                gd = 0.0
                for n in range(ns):
                    hv = hs[b, t, c, n]
                    gC[b, t, n] += g * hv
                    # cotangent of h[t] = direct output path + carried from t+1
                    ght = gh[c, n] + g * Cm[b, t, n]
                    a = np.exp(d * A[c, n])
                    hprev = hs[b, t - 1, c, n] if t > 0 else 0.0
                    ga = ght * hprev
                    gd += ga * a * A[c, n] + ght * Bm[b, t, n] * xv
                    gA[c, n] += ga * a * d
                    gB[b, t, n] += ght * d * xv
                    gxv += ght * d * Bm[b, t, n]
                    gh[c, n] = ght * a
                gdelta[b, t, c] = gd
                gx[b, t, c] = gxv
    return gx, gdelta, gA, gB, gC, gD
