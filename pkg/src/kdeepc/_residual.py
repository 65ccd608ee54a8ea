"""Membership-residual machinery.

The residual of a query window v~ against the data columns v_1..v_n is

    r(g, v~) = g' K g + k(v~, v~) - 2 sum_i g_i k(v~, v_i)

the squared RKHS distance between sum_i g_i v_i and v~.  The query window
shares the data's input/output kernels; its leading samples (the measured
context) are fixed while the trailing outputs -- and, for control, the
trailing inputs -- are free decision variables.  This module evaluates the
residual and its analytic gradients in (g, free outputs, free inputs),
caching every contribution of the fixed samples.

Noise handling: the Gram matrix K is built with both (data) sides averaged;
the cross terms k(v~, v_i) average the data side only; the query self term
k(v~, v~) uses the raw kernel.  With those conventions the residual stays an
exact squared norm of sum_i g_i mu_i - k_v~ and cannot go negative beyond
roundoff.
"""
from __future__ import annotations

import numpy as np

from . import _accel
from .hankel import GramProblem
from .kernels import EmpiricalNoise, GaussianNoise, KernelSpec, gaussian_embedded


class _DataSideKernel:
    """Kernel evaluations with the data-side argument noise-averaged once."""

    def __init__(self, spec: KernelSpec, noise, dim: int):
        self._offsets = None
        if noise is None or (isinstance(noise, GaussianNoise) and noise.sigma == 0.0):
            self._code = _accel.encode(spec)
        elif isinstance(noise, GaussianNoise):
            self._code = _accel.encode(gaussian_embedded(spec, noise.sigma, dim))
        elif isinstance(noise, EmpiricalNoise):
            self._code = _accel.encode(spec)
            offsets = noise.offsets()
            if offsets.shape[1] != dim:
                raise ValueError(
                    f"noise samples have dimension {offsets.shape[1]}, data has {dim}"
                )
            self._offsets = offsets
        else:
            raise TypeError(f"unknown noise model {noise!r}")

    def shift_eval(self, q, d, offset, ncols):
        if self._offsets is None:
            return _accel.shift_eval(self._code, q, d, offset, ncols)
        total = None
        for off in self._offsets:
            block = _accel.shift_eval(self._code, q, d + off, offset, ncols)
            total = block if total is None else total + block
        return total / self._offsets.shape[0]

    def shift_grad(self, q, d, offset, ncols, coef):
        if self._offsets is None:
            return _accel.shift_grad(self._code, q, d, offset, ncols, coef)
        total = None
        for off in self._offsets:
            block = _accel.shift_grad(self._code, q, d + off, offset, ncols, coef)
            total = block if total is None else total + block
        return total / self._offsets.shape[0]


def _tail(arr, name, rows, dim):
    out = np.ascontiguousarray(np.asarray(arr, dtype=float))
    if out.ndim == 1:
        out = out[:, None]
    if out.shape != (rows, dim):
        raise ValueError(f"{name} must have shape ({rows}, {dim}), got {out.shape}")
    return out


class ResidualEngine:
    """Residual values and gradients over one GramProblem and fixed context.

    ``u_tail`` fixes the trailing inputs (prediction); passing None leaves
    them free (control), in which case every evaluation must supply them.
    """

    def __init__(self, gram: GramProblem, u_prefix, y_prefix, u_tail=None):
        data = gram.data
        self.gram = gram
        self.n = gram.n_cols
        self.depth = gram.depth
        self.n_u = data.n_u
        self.n_y = data.n_y

        u_prefix = np.atleast_2d(np.asarray(u_prefix, dtype=float))
        y_prefix = np.atleast_2d(np.asarray(y_prefix, dtype=float))
        if u_prefix.shape[1] != self.n_u or y_prefix.shape[1] != self.n_y:
            raise ValueError("context dimensions do not match the data")
        self.p_u = u_prefix.shape[0]
        self.p_y = y_prefix.shape[0]
        if self.p_y >= self.depth or self.p_u >= self.depth:
            raise ValueError("context must be shorter than the window depth")
        self.free_y = self.depth - self.p_y
        self.u_free = u_tail is None
        self.free_u = self.depth - self.p_u if self.u_free else 0

        self._ku_raw = _accel.encode(gram.k_u)
        self._ky_raw = _accel.encode(gram.k_y)
        self._ku_side = _DataSideKernel(gram.k_u, None, self.n_u)
        self._ky_side = _DataSideKernel(gram.k_y, gram.noise, self.n_y)

        cross = np.zeros(self.n)
        kvv = 0.0
        if self.u_free:
            cross += self._ku_side.shift_eval(u_prefix, data.u, 0, self.n).sum(axis=0)
            kvv += float(_accel.self_eval(self._ku_raw, u_prefix).sum())
        else:
            u_tail = _tail(u_tail, "u_tail", self.depth - self.p_u, self.n_u)
            u_full = np.vstack([u_prefix, u_tail])
            cross += self._ku_side.shift_eval(u_full, data.u, 0, self.n).sum(axis=0)
            kvv += float(_accel.self_eval(self._ku_raw, u_full).sum())
        cross += self._ky_side.shift_eval(y_prefix, data.y, 0, self.n).sum(axis=0)
        kvv += float(_accel.self_eval(self._ky_raw, y_prefix).sum())
        self._cross_fixed = cross
        self._kvv_fixed = kvv

    def _check_g(self, g):
        g = np.ascontiguousarray(np.asarray(g, dtype=float))
        if g.shape != (self.n,):
            raise ValueError(f"g must have shape ({self.n},), got {g.shape}")
        return g

    def _tails(self, y_tail, u_tail):
        y_tail = _tail(y_tail, "y_tail", self.free_y, self.n_y)
        if self.u_free:
            if u_tail is None:
                raise ValueError("this engine has free inputs; pass u_tail")
            u_tail = _tail(u_tail, "u_tail", self.free_u, self.n_u)
        elif u_tail is not None:
            raise ValueError("this engine has fixed inputs; u_tail must be None")
        return y_tail, u_tail

    def assemble(self, y_tail, u_tail=None):
        """(cross, kvv): cross_i = k(v~, v_i) and the self term k(v~, v~)."""
        y_tail, u_tail = self._tails(y_tail, u_tail)
        cross = self._cross_fixed + self._ky_side.shift_eval(
            y_tail, self.gram.data.y, self.p_y, self.n
        ).sum(axis=0)
        kvv = self._kvv_fixed + float(_accel.self_eval(self._ky_raw, y_tail).sum())
        if self.u_free:
            cross = cross + self._ku_side.shift_eval(
                u_tail, self.gram.data.u, self.p_u, self.n
            ).sum(axis=0)
            kvv += float(_accel.self_eval(self._ku_raw, u_tail).sum())
        return cross, kvv

    def cross_vector(self, y_tail, u_tail=None) -> np.ndarray:
        """c_i = k(v~, v_i) for the query assembled from context + tails."""
        return self.assemble(y_tail, u_tail)[0]

    def kvv(self, y_tail, u_tail=None) -> float:
        """Query self-kernel k(v~, v~), always with the raw kernels."""
        return self.assemble(y_tail, u_tail)[1]

    def value_from(self, g, cross, kvv) -> float:
        """Residual from precomputed (cross, kvv)."""
        g = self._check_g(g)
        return float(g @ self.gram.gram @ g + kvv - 2.0 * (g @ cross))

    def tail_grads(self, g, y_tail, u_tail=None):
        """(grad_y, grad_u-or-None): residual gradients in the free tails."""
        g = self._check_g(g)
        y_tail, u_tail = self._tails(y_tail, u_tail)
        data = self.gram.data
        grad_y = 2.0 * _accel.self_grad(self._ky_raw, y_tail) - 2.0 * (
            self._ky_side.shift_grad(y_tail, data.y, self.p_y, self.n, g)
        )
        grad_u = None
        if self.u_free:
            grad_u = 2.0 * _accel.self_grad(self._ku_raw, u_tail) - 2.0 * (
                self._ku_side.shift_grad(u_tail, data.u, self.p_u, self.n, g)
            )
        return grad_y, grad_u

    def value(self, g, y_tail, u_tail=None) -> float:
        cross, kvv = self.assemble(y_tail, u_tail)
        return self.value_from(g, cross, kvv)

    def value_and_grad(self, g, y_tail, u_tail=None):
        """Returns (value, grad_g, grad_y_tail, grad_u_tail-or-None)."""
        g = self._check_g(g)
        cross, kvv = self.assemble(y_tail, u_tail)
        kg = self.gram.gram @ g
        value = float(g @ kg + kvv - 2.0 * (g @ cross))
        grad_g = 2.0 * (kg - cross)
        grad_y, grad_u = self.tail_grads(g, y_tail, u_tail)
        return value, grad_g, grad_y, grad_u
