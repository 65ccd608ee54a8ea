"""Composable scalar kernels on real vectors.

A kernel here is a positive-weighted sum of terms, each term a product of
base factors.  Every factor is symmetric and smooth, so the composite is a
symmetric positive-semidefinite kernel with analytic derivatives in its
second argument.  The module also provides noise-averaged evaluation
(kernel mean embedding) with a Gaussian closed form and an empirical
fallback.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import NumericOverflowError, UnsupportedEmbeddingError

# exp() overflows float64 just above 709; refuse a little earlier.
MAX_EXP_ARG = 700.0


@dataclass(frozen=True)
class Linear:
    """k(x, y) = x . y"""


@dataclass(frozen=True)
class Polynomial:
    """k(x, y) = (offset + x . y) ** degree"""

    degree: int
    offset: float = 0.0


@dataclass(frozen=True)
class Rbf:
    """k(x, y) = exp(-||x - y||^2 / denominator)"""

    denominator: float


@dataclass(frozen=True)
class Exponential:
    """k(x, y) = exp(x . y)"""


Factor = Union[Linear, Polynomial, Rbf, Exponential]


def _validated_factor(factor) -> Factor:
    if isinstance(factor, Polynomial):
        degree = factor.degree
        if isinstance(degree, bool) or not isinstance(degree, (int, np.integer)):
            raise ValueError(f"polynomial degree must be an integer, got {degree!r}")
        if degree < 1:
            raise ValueError(f"polynomial degree must be >= 1, got {degree}")
        offset = float(factor.offset)
        if not (math.isfinite(offset) and offset >= 0.0):
            raise ValueError(f"polynomial offset must be finite and >= 0, got {offset}")
        return Polynomial(int(degree), offset)
    if isinstance(factor, Rbf):
        den = float(factor.denominator)
        if not (math.isfinite(den) and den > 0.0):
            raise ValueError(f"rbf denominator must be finite and > 0, got {den}")
        return Rbf(den)
    if isinstance(factor, (Linear, Exponential)):
        return factor
    raise TypeError(f"unknown kernel factor {factor!r}")


def term(weight, *factors):
    """Build one (weight, factors) entry for a KernelSpec."""
    return (float(weight), tuple(factors))


@dataclass(frozen=True)
class KernelSpec:
    """Positive-weighted sum of factor products.

    ``terms`` is a sequence of ``(weight, factors)`` pairs; the kernel value
    is ``sum_t weight_t * prod_f factor_tf(x, y)``.  Immutable after
    construction and safe for concurrent use.
    """

    terms: tuple

    def __post_init__(self):
        if len(self.terms) == 0:
            raise ValueError("a kernel needs at least one term")
        normalized = []
        for entry in self.terms:
            weight, factors = entry
            w = float(weight)
            if not (math.isfinite(w) and w > 0.0):
                raise ValueError(f"term weight must be finite and > 0, got {w}")
            factors = tuple(_validated_factor(f) for f in factors)
            if not factors:
                raise ValueError("a term needs at least one factor")
            normalized.append((w, factors))
        object.__setattr__(self, "terms", tuple(normalized))

    @property
    def max_factors(self) -> int:
        return max(len(f) for _, f in self.terms)


def linear_kernel(weight=1.0) -> KernelSpec:
    """The plain inner-product kernel."""
    return KernelSpec((term(weight, Linear()),))


def rbf_kernel(denominator, weight=1.0) -> KernelSpec:
    """A single squared-exponential term."""
    return KernelSpec((term(weight, Rbf(denominator)),))


def _as_vector(value, name) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


def _pair_stats(x, y):
    diff = x - y
    return float(x @ y), float(diff @ diff)


def _factor_value(factor, dot, sq, term_index):
    if isinstance(factor, Linear):
        return dot
    if isinstance(factor, Polynomial):
        return (factor.offset + dot) ** factor.degree
    if isinstance(factor, Rbf):
        return math.exp(-sq / factor.denominator)
    if dot > MAX_EXP_ARG:
        raise NumericOverflowError(
            f"exponential factor in term {term_index} overflows: "
            f"exponent {dot:.6g} exceeds {MAX_EXP_ARG:g}"
        )
    return math.exp(dot)


def evaluate(spec: KernelSpec, x, y) -> float:
    """Kernel value k(x, y).

    Raises ValueError on dimension mismatch and NumericOverflowError (naming
    the offending term) when a factor leaves the float64 range.
    """
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    if x.shape != y.shape:
        raise ValueError(
            f"x and y must have equal dimension, got {x.shape[0]} and {y.shape[0]}"
        )
    dot, sq = _pair_stats(x, y)
    total = 0.0
    for idx, (weight, factors) in enumerate(spec.terms):
        prod = 1.0
        for factor in factors:
            prod *= _factor_value(factor, dot, sq, idx)
        value = weight * prod
        if not math.isfinite(value):
            raise NumericOverflowError(f"term {idx} evaluated to a non-finite value")
        total += value
    return total


def _factor_grad_y(factor, x, y, value):
    # derivative of the factor in its second argument
    if isinstance(factor, Linear):
        return x
    if isinstance(factor, Polynomial):
        dot = float(x @ y)
        return factor.degree * (factor.offset + dot) ** (factor.degree - 1) * x
    if isinstance(factor, Rbf):
        return value * (2.0 / factor.denominator) * (x - y)
    return value * x  # Exponential


def grad_y(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient of k(x, y) in y, assembled factor-by-factor (product rule)."""
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    if x.shape != y.shape:
        raise ValueError(
            f"x and y must have equal dimension, got {x.shape[0]} and {y.shape[0]}"
        )
    dot, sq = _pair_stats(x, y)
    out = np.zeros_like(y)
    for idx, (weight, factors) in enumerate(spec.terms):
        values = [_factor_value(f, dot, sq, idx) for f in factors]
        for i, factor in enumerate(factors):
            rest = weight
            for j, v in enumerate(values):
                if j != i:
                    rest *= v
            out += rest * _factor_grad_y(factor, x, y, values[i])
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError("kernel gradient is non-finite")
    return out


@dataclass(frozen=True)
class GaussianNoise:
    """Isotropic Gaussian noise with per-coordinate standard deviation."""

    sigma: float

    def __post_init__(self):
        s = float(self.sigma)
        if not (math.isfinite(s) and s >= 0.0):
            raise ValueError(f"sigma must be finite and >= 0, got {s}")
        object.__setattr__(self, "sigma", s)


@dataclass(frozen=True)
class EmpiricalNoise:
    """Noise given as an explicit set of offset vectors."""

    samples: tuple

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError("empirical noise needs at least one sample")
        rows = []
        dim = None
        for sample in self.samples:
            row = tuple(float(v) for v in np.atleast_1d(np.asarray(sample, dtype=float)))
            if dim is None:
                dim = len(row)
            elif len(row) != dim:
                raise ValueError("empirical noise samples must share one dimension")
            rows.append(row)
        object.__setattr__(self, "samples", tuple(rows))

    def offsets(self) -> np.ndarray:
        return np.asarray(self.samples, dtype=float)


NoiseModel = Union[None, GaussianNoise, EmpiricalNoise]


def empirical_from_gaussian(sigma, dim, n_samples=64, seed=0) -> EmpiricalNoise:
    """Sampled stand-in for GaussianNoise when no closed form applies."""
    rng = np.random.default_rng(seed)
    draws = rng.normal(0.0, sigma, size=(int(n_samples), int(dim)))
    return EmpiricalNoise(tuple(map(tuple, draws)))


def gaussian_embedded(spec: KernelSpec, sigma: float, dim: int) -> KernelSpec:
    """Closed-form average of the kernel over Gaussian noise in its first argument.

    Supported terms: products of Rbf factors (merged into a single Rbf) and a
    lone Linear factor.  Anything else has no closed form here and raises
    UnsupportedEmbeddingError; callers can fall back to EmpiricalNoise.
    """
    sigma = float(sigma)
    if sigma == 0.0:
        return spec
    two_var = 2.0 * sigma * sigma
    new_terms = []
    for idx, (weight, factors) in enumerate(spec.terms):
        if all(isinstance(f, Rbf) for f in factors):
            inv = sum(1.0 / f.denominator for f in factors)
            d_eff = 1.0 / inv
            scale = (d_eff / (d_eff + two_var)) ** (dim / 2.0)
            new_terms.append((weight * scale, (Rbf(d_eff + two_var),)))
        elif len(factors) == 1 and isinstance(factors[0], Linear):
            new_terms.append((weight, factors))
        else:
            names = "*".join(type(f).__name__ for f in factors)
            raise UnsupportedEmbeddingError(
                f"no Gaussian closed form for term {idx} ({names}); "
                "use EmpiricalNoise instead"
            )
    return KernelSpec(tuple(new_terms))


def mean_embed(spec: KernelSpec, noise: NoiseModel, x_center, y) -> float:
    """Noise-averaged kernel value E[k(x_center + w, y)] over the noise model.

    Only the first argument is averaged; the second is taken as exact.
    """
    if noise is None:
        return evaluate(spec, x_center, y)
    if isinstance(noise, GaussianNoise):
        if noise.sigma == 0.0:
            return evaluate(spec, x_center, y)
        x_center = _as_vector(x_center, "x_center")
        embedded = gaussian_embedded(spec, noise.sigma, x_center.shape[0])
        return evaluate(embedded, x_center, y)
    if isinstance(noise, EmpiricalNoise):
        x_center = _as_vector(x_center, "x_center")
        offsets = noise.offsets()
        if offsets.shape[1] != x_center.shape[0]:
            raise ValueError(
                f"noise samples have dimension {offsets.shape[1]}, "
                f"x_center has {x_center.shape[0]}"
            )
        total = 0.0
        for off in offsets:
            total += evaluate(spec, x_center + off, y)
        return total / offsets.shape[0]
    raise TypeError(f"unknown noise model {noise!r}")


# --- config-file grammar -------------------------------------------------

_FACTOR_KEYS = {
    "linear": (),
    "polynomial": ("degree", "offset"),
    "rbf": ("denominator",),
    "exponential": (),
}


def _factor_from_config(obj) -> Factor:
    if not isinstance(obj, dict) or "type" not in obj:
        raise ValueError(f"kernel factor must be a dict with a 'type' key, got {obj!r}")
    kind = obj["type"]
    if kind not in _FACTOR_KEYS:
        raise ValueError(f"unknown kernel factor type {kind!r}")
    extra = set(obj) - {"type"} - set(_FACTOR_KEYS[kind])
    if extra:
        raise ValueError(f"unexpected keys {sorted(extra)} for factor type {kind!r}")
    if kind == "linear":
        return Linear()
    if kind == "exponential":
        return Exponential()
    if kind == "rbf":
        if "denominator" not in obj:
            raise ValueError("rbf factor needs a 'denominator'")
        return Rbf(float(obj["denominator"]))
    if "degree" not in obj:
        raise ValueError("polynomial factor needs a 'degree'")
    return Polynomial(int(obj["degree"]), float(obj.get("offset", 0.0)))


def _factor_to_config(factor: Factor) -> dict:
    if isinstance(factor, Linear):
        return {"type": "linear"}
    if isinstance(factor, Exponential):
        return {"type": "exponential"}
    if isinstance(factor, Rbf):
        return {"type": "rbf", "denominator": factor.denominator}
    return {"type": "polynomial", "degree": factor.degree, "offset": factor.offset}


def kernel_from_config(entries) -> KernelSpec:
    """Parse the kernel grammar: a list of {weight, factors: [{type, ...}]}."""
    if not isinstance(entries, (list, tuple)):
        raise ValueError(f"kernel config must be a list of terms, got {entries!r}")
    terms = []
    for entry in entries:
        if not isinstance(entry, dict):
            raise ValueError(f"kernel term must be a dict, got {entry!r}")
        extra = set(entry) - {"weight", "factors"}
        if extra:
            raise ValueError(f"unexpected keys {sorted(extra)} in kernel term")
        if "weight" not in entry or "factors" not in entry:
            raise ValueError("kernel term needs 'weight' and 'factors'")
        factors = tuple(_factor_from_config(f) for f in entry["factors"])
        terms.append((float(entry["weight"]), factors))
    return KernelSpec(tuple(terms))


def kernel_to_config(spec: KernelSpec) -> list:
    return [
        {"weight": weight, "factors": [_factor_to_config(f) for f in factors]}
        for weight, factors in spec.terms
    ]


def noise_from_config(obj) -> NoiseModel:
    if obj is None:
        return None
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ValueError(f"noise config must be a dict with a 'kind' key, got {obj!r}")
    kind = obj["kind"]
    if kind == "none":
        if set(obj) - {"kind"}:
            raise ValueError("noise kind 'none' takes no parameters")
        return None
    if kind == "gaussian":
        if set(obj) - {"kind", "sigma"}:
            raise ValueError("noise kind 'gaussian' takes only 'sigma'")
        return GaussianNoise(float(obj.get("sigma", 0.0)))
    if kind == "empirical":
        if set(obj) - {"kind", "samples"}:
            raise ValueError("noise kind 'empirical' takes only 'samples'")
        return EmpiricalNoise(tuple(tuple(map(float, s)) for s in obj["samples"]))
    raise ValueError(f"unknown noise kind {kind!r}")


def noise_to_config(noise: NoiseModel) -> dict:
    if noise is None:
        return {"kind": "none"}
    if isinstance(noise, GaussianNoise):
        return {"kind": "gaussian", "sigma": noise.sigma}
    return {"kind": "empirical", "samples": [list(s) for s in noise.samples]}
