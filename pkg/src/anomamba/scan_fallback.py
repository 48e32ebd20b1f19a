"""Pure-numpy selective-scan kernels, the fallback for `anomamba._scan`.

Same contract as the compiled extension: a sequential loop over the token
axis with everything else vectorized. Kept dependency-free so the package
still trains (slower) when no compiler is available.
"""

from __future__ import annotations

import numpy as np


def scan_forward(u, delta, A, Bm, Cm, Dskip):
    nb, t_len, _ = u.shape
    n = A.shape[1]
    abar = np.exp(delta[..., None] * A)  # (B,T,D,N)
    dbu = delta[..., None] * Bm[:, :, None, :] * u[..., None]
    hall = np.empty(abar.shape, dtype=u.dtype)
    h = np.zeros((nb, u.shape[2], n), dtype=u.dtype)
    for t in range(t_len):
        h = abar[:, t] * h + dbu[:, t]
        hall[:, t] = h
    y = np.einsum("btdn,btn->btd", hall, Cm) + u * Dskip
    return y, hall


def scan_backward(gy, u, delta, A, Bm, Cm, Dskip, hall):
    nb, t_len, d_len = u.shape
    abar = np.exp(delta[..., None] * A)
    dC = np.einsum("btd,btdn->btn", gy, hall)
    dD = np.einsum("btd,btd->d", gy, u)
    du = gy * Dskip
    ddelta = np.empty_like(delta)
    dB = np.empty_like(Bm)
    dA = np.zeros_like(A)
    lam = np.zeros((nb, d_len, A.shape[1]), dtype=u.dtype)
    for t in range(t_len - 1, -1, -1):
        lam = lam + gy[:, t, :, None] * Cm[:, t, None, :]
        hprev = hall[:, t - 1] if t > 0 else 0.0
        dabar = lam * hprev
        ab = abar[:, t]
        ddelta[:, t] = (dabar * ab * A).sum(-1) + (lam * Bm[:, t, None, :]).sum(-1) * u[:, t]
        dA += (dabar * ab * delta[:, t, :, None]).sum(0)
        dB[:, t] = (lam * (delta[:, t] * u[:, t])[..., None]).sum(1)
        du[:, t] += (lam * Bm[:, t, None, :]).sum(-1) * delta[:, t]
        lam = lam * ab
    return du, ddelta, dA, dB, dC, dD
