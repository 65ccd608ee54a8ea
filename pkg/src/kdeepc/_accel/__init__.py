"""Backend dispatch for the hot kernel-evaluation loops.

The environment variable KDEEPC_BACKEND picks the implementation at import
time: "numba" requires the numba JIT, "numpy" forces the pure-numpy
fallback, and "auto" (the default) uses numba when importable and falls
back to numpy otherwise.  Both backends expose identical primitives and
agree to floating-point roundoff.
"""
from __future__ import annotations

import os

import numpy as np

from . import np_impl
from .codes import KernelCode, encode

__all__ = [
    "KernelCode",
    "encode",
    "active_backend",
    "pair_eval",
    "shift_eval",
    "shift_grad",
    "self_eval",
    "self_grad",
    "warmup",
]

_VALID_CHOICES = ("auto", "numba", "numpy")
_choice = os.environ.get("KDEEPC_BACKEND", "auto").strip().lower()
if _choice not in _VALID_CHOICES:
    raise ValueError(
        f"KDEEPC_BACKEND must be one of {_VALID_CHOICES}, got {_choice!r}"
    )

_impl = np_impl
_backend_name = "numpy"
if _choice in ("auto", "numba"):
    try:
        from . import nb_impl

        _impl = nb_impl
        _backend_name = "numba"
    except ImportError:
        if _choice == "numba":
            raise ImportError(
                "KDEEPC_BACKEND=numba but numba is not importable"
            ) from None


def active_backend() -> str:
    """Name of the implementation in use: 'numba' or 'numpy'."""
    return _backend_name


def _matrix(arr) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if out.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {out.shape}")
    return out


def _vector(arr) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if out.ndim != 1:
        raise ValueError(f"expected a 1-D array, got shape {out.shape}")
    return out


def pair_eval(code: KernelCode, xa, xb) -> np.ndarray:
    """All-pairs kernel values k(xa[i], xb[j]) as an (na, nb) matrix."""
    return _impl.pair_eval(*code, _matrix(xa), _matrix(xb))


def shift_eval(code: KernelCode, q, d, offset, ncols) -> np.ndarray:
    """Diagonal-aligned block C[p, i] = k(q[p], d[offset + p + i])."""
    return _impl.shift_eval(*code, _matrix(q), _matrix(d), int(offset), int(ncols))


def shift_grad(code: KernelCode, q, d, offset, ncols, coef) -> np.ndarray:
    """sum_i coef[i] * d k(d[offset + p + i], q[p]) / d q[p], per row p."""
    return _impl.shift_grad(
        *code, _matrix(q), _matrix(d), int(offset), int(ncols), _vector(coef)
    )


def self_eval(code: KernelCode, q) -> np.ndarray:
    """Diagonal kernel values k(q[p], q[p])."""
    return _impl.self_eval(*code, _matrix(q))


def self_grad(code: KernelCode, q) -> np.ndarray:
    """Second-argument gradient at coincident points, d k(a, b)/d b at a=b=q[p]."""
    return _impl.self_grad(*code, _matrix(q))


def warmup() -> None:
    """Run every primitive once on tiny inputs (triggers JIT compilation)."""
    from ..kernels import Exponential, KernelSpec, Linear, Polynomial, Rbf, term

    spec = KernelSpec(
        (
            term(0.5, Linear()),
            term(1.0, Polynomial(2, 1.0)),
            term(0.25, Rbf(4.0), Exponential()),
        )
    )
    code = encode(spec)
    pts = np.array([[0.1, -0.2], [0.3, 0.4], [-0.5, 0.2], [0.0, 0.1]])
    pair_eval(code, pts[:2], pts)
    shift_eval(code, pts[:2], pts, 0, 2)
    shift_grad(code, pts[:2], pts, 0, 2, np.array([0.5, -1.0]))
    self_eval(code, pts)
    self_grad(code, pts)
