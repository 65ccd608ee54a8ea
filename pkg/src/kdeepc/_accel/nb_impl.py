"""Numba-compiled implementations of the batch kernel primitives.

Mirrors np_impl function-for-function; see that module for the shape
conventions.  Factor kind codes are inlined as compile-time constants
(0 linear, 1 polynomial, 2 rbf, 3 exponential); exponential primitives are
evaluated once per point pair into a small scratch buffer.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _fill_prims(prim_kinds, prim_params, dot, sq, prims):
    for i in range(prim_kinds.shape[0]):
        if prim_kinds[i] == 0:  # rbf: exp(-sq / d)
            prims[i] = math.exp(-sq / prim_params[i])
        else:  # exponential: exp(dot)
            prims[i] = math.exp(dot)


@njit(cache=True)
def _kval(weights, kinds, ipar, fpar, nfac, factor_prim, dot, prims):
    total = 0.0
    for t in range(weights.shape[0]):
        prod = weights[t]
        for f in range(nfac[t]):
            kind = kinds[t, f]
            if kind == 0:
                prod *= dot
            elif kind == 1:
                prod *= (fpar[t, f] + dot) ** ipar[t, f]
            else:
                prod *= prims[factor_prim[t, f]]
        total += prod
    return total


@njit(cache=True)
def pair_eval(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
              factor_prim, xa, xb):
    na = xa.shape[0]
    nb = xb.shape[0]
    dim = xa.shape[1]
    out = np.empty((na, nb))
    prims = np.empty(prim_kinds.shape[0])
    for i in range(na):
        for j in range(nb):
            dot = 0.0
            sq = 0.0
            for k in range(dim):
                dot += xa[i, k] * xb[j, k]
                dd = xa[i, k] - xb[j, k]
                sq += dd * dd
            _fill_prims(prim_kinds, prim_params, dot, sq, prims)
            out[i, j] = _kval(weights, kinds, ipar, fpar, nfac, factor_prim,
                              dot, prims)
    return out


@njit(cache=True)
def shift_eval(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
               factor_prim, q, d, offset, ncols):
    rows = q.shape[0]
    dim = q.shape[1]
    out = np.empty((rows, ncols))
    prims = np.empty(prim_kinds.shape[0])
    for p in range(rows):
        for i in range(ncols):
            r = offset + p + i
            dot = 0.0
            sq = 0.0
            for k in range(dim):
                dot += q[p, k] * d[r, k]
                dd = q[p, k] - d[r, k]
                sq += dd * dd
            _fill_prims(prim_kinds, prim_params, dot, sq, prims)
            out[p, i] = _kval(weights, kinds, ipar, fpar, nfac, factor_prim,
                              dot, prims)
    return out


@njit(cache=True)
def _grad_acc(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
              factor_prim, a, b, scale, out, vals, prims):
    """out += scale * d k(a, b) / d b for 1-D points a (data) and b (query)."""
    dim = a.shape[0]
    dot = 0.0
    sq = 0.0
    for k in range(dim):
        dot += a[k] * b[k]
        dd = a[k] - b[k]
        sq += dd * dd
    _fill_prims(prim_kinds, prim_params, dot, sq, prims)
    for t in range(weights.shape[0]):
        nf = nfac[t]
        for f in range(nf):
            kind = kinds[t, f]
            if kind == 0:
                vals[f] = dot
            elif kind == 1:
                vals[f] = (fpar[t, f] + dot) ** ipar[t, f]
            else:
                vals[f] = prims[factor_prim[t, f]]
        for f in range(nf):
            rest = weights[t] * scale
            for l in range(nf):
                if l != f:
                    rest *= vals[l]
            kind = kinds[t, f]
            if kind == 0:
                for k in range(dim):
                    out[k] += rest * a[k]
            elif kind == 1:
                base = fpar[t, f] + dot
                scal = ipar[t, f] * base ** (ipar[t, f] - 1)
                for k in range(dim):
                    out[k] += rest * scal * a[k]
            elif kind == 2:
                scal = vals[f] * 2.0 / fpar[t, f]
                for k in range(dim):
                    out[k] += rest * scal * (a[k] - b[k])
            else:
                scal = vals[f]
                for k in range(dim):
                    out[k] += rest * scal * a[k]


@njit(cache=True)
def shift_grad(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
               factor_prim, q, d, offset, ncols, coef):
    rows = q.shape[0]
    dim = q.shape[1]
    out = np.zeros((rows, dim))
    vals = np.empty(kinds.shape[1])
    prims = np.empty(prim_kinds.shape[0])
    for p in range(rows):
        for i in range(ncols):
            w = coef[i]
            if w == 0.0:
                continue
            _grad_acc(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
                      factor_prim, d[offset + p + i], q[p], w, out[p], vals, prims)
    return out


@njit(cache=True)
def self_eval(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
              factor_prim, q):
    rows = q.shape[0]
    dim = q.shape[1]
    out = np.empty(rows)
    prims = np.empty(prim_kinds.shape[0])
    for p in range(rows):
        dot = 0.0
        for k in range(dim):
            dot += q[p, k] * q[p, k]
        _fill_prims(prim_kinds, prim_params, dot, 0.0, prims)
        out[p] = _kval(weights, kinds, ipar, fpar, nfac, factor_prim, dot, prims)
    return out


@njit(cache=True)
def self_grad(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
              factor_prim, q):
    rows = q.shape[0]
    dim = q.shape[1]
    out = np.zeros((rows, dim))
    vals = np.empty(kinds.shape[1])
    prims = np.empty(prim_kinds.shape[0])
    for p in range(rows):
        _grad_acc(weights, kinds, ipar, fpar, nfac, prim_kinds, prim_params,
                  factor_prim, q[p], q[p], 1.0, out[p], vals, prims)
    return out
