"""Flat array encoding of kernel specs for the batch evaluation backends."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..kernels import Exponential, KernelSpec, Linear, Polynomial, Rbf

LINEAR = 0
POLYNOMIAL = 1
RBF = 2
EXPONENTIAL = 3

PRIM_RBF = 0
PRIM_EXP = 1


class KernelCode(NamedTuple):
    """Arrays describing a KernelSpec: weights, factor kinds and parameters.

    kinds/ipar/fpar are (n_terms, max_factors); ipar holds the polynomial
    degree, fpar the rbf denominator or the polynomial offset; nfac gives
    the factor count per term.  Distinct exponential primitives -- each
    exp(-sq/d) and the single exp(dot) -- are deduplicated into a table
    (prim_kinds, prim_params) so backends evaluate each once per point pair;
    factor_prim maps exponential-type factors to their table slot (-1 for
    linear/polynomial factors).
    """

    weights: np.ndarray
    kinds: np.ndarray
    ipar: np.ndarray
    fpar: np.ndarray
    nfac: np.ndarray
    prim_kinds: np.ndarray
    prim_params: np.ndarray
    factor_prim: np.ndarray


def encode(spec: KernelSpec) -> KernelCode:
    n_terms = len(spec.terms)
    max_f = spec.max_factors
    weights = np.zeros(n_terms, dtype=np.float64)
    kinds = np.full((n_terms, max_f), -1, dtype=np.int64)
    ipar = np.zeros((n_terms, max_f), dtype=np.int64)
    fpar = np.zeros((n_terms, max_f), dtype=np.float64)
    nfac = np.zeros(n_terms, dtype=np.int64)
    factor_prim = np.full((n_terms, max_f), -1, dtype=np.int64)
    primitives: list = []

    def prim_index(kind, param):
        key = (kind, param)
        if key not in primitives:
            primitives.append(key)
        return primitives.index(key)

    for t, (weight, factors) in enumerate(spec.terms):
        weights[t] = weight
        nfac[t] = len(factors)
        for f, factor in enumerate(factors):
            if isinstance(factor, Linear):
                kinds[t, f] = LINEAR
            elif isinstance(factor, Polynomial):
                kinds[t, f] = POLYNOMIAL
                ipar[t, f] = factor.degree
                fpar[t, f] = factor.offset
            elif isinstance(factor, Rbf):
                kinds[t, f] = RBF
                fpar[t, f] = factor.denominator
                factor_prim[t, f] = prim_index(PRIM_RBF, factor.denominator)
            elif isinstance(factor, Exponential):
                kinds[t, f] = EXPONENTIAL
                factor_prim[t, f] = prim_index(PRIM_EXP, 0.0)
            else:  # pragma: no cover - KernelSpec already validated
                raise TypeError(f"cannot encode factor {factor!r}")
    prim_kinds = np.array([k for k, _ in primitives], dtype=np.int64)
    prim_params = np.array([p for _, p in primitives], dtype=np.float64)
    return KernelCode(weights, kinds, ipar, fpar, nfac,
                      prim_kinds, prim_params, factor_prim)
