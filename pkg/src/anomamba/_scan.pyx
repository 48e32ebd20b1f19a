# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled selective-scan recurrence (forward + adjoint).

Shapes: u, delta (B, T, D); A (D, N); Bm, Cm (B, T, N); Dskip (D,).
Recurrence per batch item:
    h[t,d,n] = exp(delta[t,d]*A[d,n]) * h[t-1,d,n] + delta[t,d]*Bm[t,n]*u[t,d]
    y[t,d]   = sum_n Cm[t,n]*h[t,d,n] + Dskip[d]*u[t,d]
"""

import numpy as np

from libc.math cimport exp

ctypedef fused real:
    float
    double


def scan_forward(real[:, :, ::1] u, real[:, :, ::1] delta, real[:, ::1] A,
                 real[:, :, ::1] Bm, real[:, :, ::1] Cm, real[::1] Dskip):
    cdef Py_ssize_t B = u.shape[0], T = u.shape[1], D = u.shape[2], N = A.shape[1]
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    y_arr = np.empty((B, T, D), dtype=dt)
    h_arr = np.empty((B, T, D, N), dtype=dt)
    cdef real[:, :, ::1] y = y_arr
    cdef real[:, :, :, ::1] hall = h_arr
    cdef Py_ssize_t b, t, d, n
    cdef real hv, acc, dtv, uv, bu

    for b in range(B):
        for t in range(T):
            for d in range(D):
                dtv = delta[b, t, d]
                uv = u[b, t, d]
                bu = dtv * uv
                acc = Dskip[d] * uv
                for n in range(N):
                    hv = bu * Bm[b, t, n]
                    if t > 0:
                        hv += exp(dtv * A[d, n]) * hall[b, t - 1, d, n]
                    hall[b, t, d, n] = hv
                    acc += Cm[b, t, n] * hv
                y[b, t, d] = acc
    return y_arr, h_arr


def scan_backward(real[:, :, ::1] gy, real[:, :, ::1] u, real[:, :, ::1] delta,
                  real[:, ::1] A, real[:, :, ::1] Bm, real[:, :, ::1] Cm,
                  real[::1] Dskip, real[:, :, :, ::1] hall):
    cdef Py_ssize_t B = u.shape[0], T = u.shape[1], D = u.shape[2], N = A.shape[1]
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    du_arr = np.zeros((B, T, D), dtype=dt)
    ddelta_arr = np.zeros((B, T, D), dtype=dt)
    dA_arr = np.zeros((D, N), dtype=dt)
    dB_arr = np.zeros((B, T, N), dtype=dt)
    dC_arr = np.zeros((B, T, N), dtype=dt)
    dD_arr = np.zeros((D,), dtype=dt)
    lam_arr = np.zeros((D, N), dtype=dt)

    cdef real[:, :, ::1] du = du_arr, ddelta = ddelta_arr
    cdef real[:, ::1] dA = dA_arr, lam = lam_arr
    cdef real[:, :, ::1] dB = dB_arr, dC = dC_arr
    cdef real[::1] dD = dD_arr
    cdef Py_ssize_t b, t, d, n
    cdef real gv, dtv, uv, lamv, abar, hprev, dabar, dd_acc, du_acc

    for b in range(B):
        for d in range(D):
            for n in range(N):
                lam[d, n] = 0.0
        for t in range(T - 1, -1, -1):
            for d in range(D):
                gv = gy[b, t, d]
                dtv = delta[b, t, d]
                uv = u[b, t, d]
                dD[d] += gv * uv
                du_acc = Dskip[d] * gv
                dd_acc = 0.0
                for n in range(N):
                    lamv = lam[d, n] + gv * Cm[b, t, n]
                    dC[b, t, n] += gv * hall[b, t, d, n]
                    abar = exp(dtv * A[d, n])
                    hprev = hall[b, t - 1, d, n] if t > 0 else 0.0
                    dabar = lamv * hprev
                    dd_acc += dabar * abar * A[d, n] + lamv * Bm[b, t, n] * uv
                    dA[d, n] += dabar * abar * dtv
                    dB[b, t, n] += lamv * dtv * uv
                    du_acc += lamv * dtv * Bm[b, t, n]
                    lam[d, n] = lamv * abar
                ddelta[b, t, d] = dd_acc
                du[b, t, d] = du_acc
    return du_arr, ddelta_arr, dA_arr, dB_arr, dC_arr, dD_arr
