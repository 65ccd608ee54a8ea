"""Pure-numpy implementations of the batch kernel primitives.

Data matrices are (rows, dim).  The shifted variants realize the
diagonal-aligned blocks used by windowed trajectory kernels:

    C[p, i] = k(q[p], d[offset + p + i])        for i < ncols

shift_grad additionally weights the gradients in the second (query)
argument by coef[i] and sums over i.  Exponential primitives are evaluated
once per point pair from the deduplicated table in the kernel code.
"""
from __future__ import annotations

import numpy as np

from .codes import LINEAR, POLYNOMIAL, PRIM_RBF, RBF


def _primitives(prim_kinds, prim_params, dots, sq):
    return [
        np.exp(-sq / prim_params[i]) if prim_kinds[i] == PRIM_RBF else np.exp(dots)
        for i in range(prim_kinds.shape[0])
    ]


def _accumulate(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
                factor_prim, dots, sq):
    prims = _primitives(prim_kinds, prim_params, dots, sq)
    out = np.zeros(dots.shape)
    for t in range(weights.shape[0]):
        prod = np.full(dots.shape, weights[t])
        for f in range(int(nfac[t])):
            kind = int(kinds[t, f])
            if kind == LINEAR:
                prod = prod * dots
            elif kind == POLYNOMIAL:
                prod = prod * (fpar[t, f] + dots) ** int(ipar[t, f])
            else:
                prod = prod * prims[factor_prim[t, f]]
        out += prod
    return out


def _grad_second(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
                 factor_prim, a, b, dots, sq):
    """Sum over terms of d k(a, b) / d b; a and b broadcast to (..., dim)."""
    prims = _primitives(prim_kinds, prim_params, dots, sq)
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    for t in range(weights.shape[0]):
        nf = int(nfac[t])
        values = []
        grads = []
        for f in range(nf):
            kind = int(kinds[t, f])
            if kind == LINEAR:
                v = dots
                dv = np.broadcast_to(a, out.shape)
            elif kind == POLYNOMIAL:
                deg = int(ipar[t, f])
                base = fpar[t, f] + dots
                v = base ** deg
                dv = (deg * base ** (deg - 1))[..., None] * a
            elif kind == RBF:
                den = fpar[t, f]
                v = prims[factor_prim[t, f]]
                dv = (v * (2.0 / den))[..., None] * (a - b)
            else:  # EXPONENTIAL
                v = prims[factor_prim[t, f]]
                dv = v[..., None] * a
            values.append(v)
            grads.append(dv)
        for f in range(nf):
            rest = np.full(dots.shape, weights[t])
            for l in range(nf):
                if l != f:
                    rest = rest * values[l]
            out = out + rest[..., None] * grads[f]
    return out


def pair_eval(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
              factor_prim, xa, xb):
    dots = xa @ xb.T
    sq = (xa * xa).sum(axis=1)[:, None] + (xb * xb).sum(axis=1)[None, :] - 2.0 * dots
    np.maximum(sq, 0.0, out=sq)
    return _accumulate(weights, kinds, ipar, fpar, nfac, prim_kinds,
                       prim_params, factor_prim, dots, sq)


def _shift_stats(q, d, offset, ncols):
    rows = q.shape[0]
    idx = offset + np.arange(rows)[:, None] + np.arange(ncols)[None, :]
    dg = d[idx]  # (rows, ncols, dim)
    dots = np.einsum("pk,pnk->pn", q, dg)
    sq = (q * q).sum(axis=1)[:, None] + (dg * dg).sum(axis=2) - 2.0 * dots
    np.maximum(sq, 0.0, out=sq)
    return dg, dots, sq


def shift_eval(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
               factor_prim, q, d, offset, ncols):
    _, dots, sq = _shift_stats(q, d, offset, ncols)
    return _accumulate(weights, kinds, ipar, fpar, nfac, prim_kinds,
                       prim_params, factor_prim, dots, sq)


def shift_grad(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
               factor_prim, q, d, offset, ncols, coef):
    dg, dots, sq = _shift_stats(q, d, offset, ncols)
    grads = _grad_second(weights, kinds, ipar, fpar, nfac, prim_kinds,
                         prim_params, factor_prim, dg, q[:, None, :], dots, sq)
    return np.einsum("n,pnk->pk", coef, grads)


def self_eval(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
              factor_prim, q):
    dots = (q * q).sum(axis=1)
    sq = np.zeros_like(dots)
    return _accumulate(weights, kinds, ipar, fpar, nfac, prim_kinds,
                       prim_params, factor_prim, dots, sq)


def self_grad(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
              factor_prim, q):
    dots = (q * q).sum(axis=1)
    sq = np.zeros_like(dots)
    return _grad_second(weights, kinds, ipar, fpar, nfac, prim_kinds,
                        prim_params, factor_prim, q, q, dots, sq)
