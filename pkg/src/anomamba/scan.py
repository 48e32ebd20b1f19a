"""Selective-scan op: backend selection + autodiff wrapper.

The compiled Cython kernel is preferred; the numpy fallback is selected
automatically when the extension is missing (or forced via
``ANOMAMBA_SCAN_BACKEND=numpy`` / :func:`set_backend`).
"""

from __future__ import annotations

import os

import numpy as np

from . import scan_fallback
from .errors import ShapeError
from .tensor import Tensor, from_op

try:
    from . import _scan as _compiled
except ImportError:  # pragma: no cover - depends on the build environment
    _compiled = None

_BACKENDS = {"numpy": scan_fallback}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_backend_name = os.environ.get(
    "ANOMAMBA_SCAN_BACKEND", "compiled" if _compiled is not None else "numpy"
)
if _backend_name not in _BACKENDS:
    _backend_name = "numpy"


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def get_backend() -> str:
    return _backend_name


def set_backend(name: str) -> None:
    global _backend_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown scan backend {name!r}; have {available_backends()}")
    _backend_name = name


def _kernel():
    return _BACKENDS[_backend_name]


def ssm_scan(u: Tensor, delta: Tensor, A: Tensor, Bm: Tensor, Cm: Tensor, Dskip: Tensor) -> Tensor:
    """Linear-time state-space recurrence.

    u, delta: (T, D) or (B, T, D); A: (D, N); Bm, Cm: matching (.., T, N);
    Dskip: (D,). Returns y with u's shape. h_0 = 0.
    """
    squeeze = u.ndim == 2
    if squeeze:
        u, delta, Bm, Cm = (x.reshape(1, *x.shape) for x in (u, delta, Bm, Cm))
    if u.shape != delta.shape:
        raise ShapeError(f"ssm_scan: u {u.shape} vs delta {delta.shape}")
    if Bm.shape != Cm.shape or Bm.shape[:2] != u.shape[:2]:
        raise ShapeError(f"ssm_scan: B {Bm.shape} / C {Cm.shape} vs u {u.shape}")
    if A.shape != (u.shape[2], Bm.shape[2]):
        raise ShapeError(f"ssm_scan: A {A.shape} vs (D={u.shape[2]}, N={Bm.shape[2]})")

    kern = _kernel()
    args = tuple(
        np.ascontiguousarray(t.data) for t in (u, delta, A, Bm, Cm, Dskip)
    )
    y, hall = kern.scan_forward(*args)

    def back(g):
        return kern.scan_backward(np.ascontiguousarray(g), *args, hall)

    out = from_op(y, (u, delta, A, Bm, Cm, Dskip), back)
    return out.reshape(*y.shape[1:]) if squeeze else out
