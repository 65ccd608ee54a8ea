"""Windowed trajectory views, their kernel Gram matrix, and
persistent-excitation diagnostics.

A recorded trajectory of inputs/outputs is viewed through depth-L windows
taken at successive start times; the pairwise window kernel

    k(win_a, win_b) = sum_k k_u(u_a[k], u_b[k]) + sum_k k_y(y_a[k], y_b[k])

defines the n-by-n Gram matrix (n = T - L + 1) that the predictor and
controller operate on.  Under a noise model the output channel is averaged
through its mean embedding: in the Gram both windows are recorded data, so
both sides are averaged; the single-sided form used against noise-free
query windows lives in the residual machinery.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import InsufficientDataError, NumericOverflowError
from .kernels import (
    GaussianNoise,
    KernelSpec,
    NoiseModel,
    evaluate,
    gaussian_embedded,
    mean_embed,
)

TRACE_RANK_TOL = 1e-9  # numerical-rank cutoff, scaled by n * sigma_max


def _as_samples(arr, name) -> np.ndarray:
    out = np.asarray(arr, dtype=float)
    if out.ndim == 1:
        out = out[:, None]
    if out.ndim != 2:
        raise ValueError(f"{name} must be (T,) or (T, dim), got shape {out.shape}")
    if out.shape[0] < 1:
        raise ValueError(f"{name} needs at least one sample")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite values")
    out = np.ascontiguousarray(out)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TrajectoryData:
    """Recorded input/output sequences with their sampling time.

    Arrays are stored read-only; instances are immutable and safe for
    concurrent reads.
    """

    u: np.ndarray
    y: np.ndarray
    dt: float

    def __post_init__(self):
        u = _as_samples(self.u, "u")
        y = _as_samples(self.y, "y")
        if u.shape[0] != y.shape[0]:
            raise ValueError(
                f"u and y must have equal length, got {u.shape[0]} and {y.shape[0]}"
            )
        dt = float(self.dt)
        if not (math.isfinite(dt) and dt > 0.0):
            raise ValueError(f"dt must be finite and > 0, got {dt}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "dt", dt)

    @property
    def length(self) -> int:
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]


def window(data: TrajectoryData, depth: int, j: int):
    """The j-th depth-L window (1-based column index, matching the
    conceptual Hankel-column numbering): samples j .. j+L-1 of each channel."""
    depth = int(depth)
    if depth < 1 or depth > data.length:
        raise InsufficientDataError(
            f"window depth {depth} invalid for trajectory of length {data.length}"
        )
    n = data.length - depth + 1
    if not 1 <= j <= n:
        raise ValueError(f"column index {j} out of range 1..{n}")
    lo = j - 1
    return data.u[lo : lo + depth], data.y[lo : lo + depth]


def _window_pair(win, name):
    u, y = win
    u = np.atleast_2d(np.asarray(u, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if u.ndim != 2 or y.ndim != 2:
        raise ValueError(f"{name} channels must be 2-D (depth, dim)")
    if u.shape[0] != y.shape[0]:
        raise ValueError(f"{name} channels must share the window depth")
    return u, y


def trajectory_kernel(k_u: KernelSpec, k_y: KernelSpec, win_a, win_b,
                      noise: NoiseModel = None) -> float:
    """Depth-aligned kernel between two (u_window, y_window) pairs.

    Both windows are treated as recorded data: under a noise model the
    output factors on each side are averaged once (the inputs are the
    applied commands and stay exact).
    """
    ua, ya = _window_pair(win_a, "win_a")
    ub, yb = _window_pair(win_b, "win_b")
    if ua.shape != ub.shape or ya.shape != yb.shape:
        raise ValueError("windows must have equal depth and dimensions")
    total = 0.0
    for k in range(ua.shape[0]):
        total += evaluate(k_u, ua[k], ub[k])
    for k in range(ya.shape[0]):
        total += _data_data_value(k_y, ya[k], yb[k], noise)
    return total


def _data_data_value(spec, a, b, noise):
    if noise is None:
        return evaluate(spec, a, b)
    if isinstance(noise, GaussianNoise):
        if noise.sigma == 0.0:
            return evaluate(spec, a, b)
        once = gaussian_embedded(spec, noise.sigma, a.shape[0])
        twice = gaussian_embedded(once, noise.sigma, a.shape[0])
        return evaluate(twice, a, b)
    offsets = noise.offsets()
    total = 0.0
    for da in offsets:
        total += mean_embed(spec, noise, b, a + da)
    return total / offsets.shape[0]


def _data_data_block(spec: KernelSpec, arr: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """All-pairs kernel matrix over the samples, both sides noise-averaged."""
    code = _accel.encode(spec)
    if noise is None or (isinstance(noise, GaussianNoise) and noise.sigma == 0.0):
        return _accel.pair_eval(code, arr, arr)
    dim = arr.shape[1]
    if isinstance(noise, GaussianNoise):
        twice = gaussian_embedded(
            gaussian_embedded(spec, noise.sigma, dim), noise.sigma, dim
        )
        return _accel.pair_eval(_accel.encode(twice), arr, arr)
    offsets = noise.offsets()
    if offsets.shape[1] != dim:
        raise ValueError(
            f"noise samples have dimension {offsets.shape[1]}, data has {dim}"
        )
    n_s = offsets.shape[0]
    total = np.zeros((arr.shape[0], arr.shape[0]))
    for s in range(n_s):
        shifted = arr + offsets[s]
        for t in range(s, n_s):
            block = _accel.pair_eval(code, shifted, arr + offsets[t])
            if s == t:
                total += block
            else:
                total += block + block.T
    return total / (n_s * n_s)


def _window_sum(block: np.ndarray, depth: int) -> np.ndarray:
    n = block.shape[0] - depth + 1
    out = np.zeros((n, n))
    for k in range(depth):
        out += block[k : k + n, k : k + n]
    return out


@dataclass(frozen=True, eq=False)
class GramProblem:
    """A depth-L windowed view of a trajectory plus its precomputed Gram matrix."""

    data: TrajectoryData
    depth: int
    k_u: KernelSpec
    k_y: KernelSpec
    gram: np.ndarray
    noise: NoiseModel = None

    @property
    def n_cols(self) -> int:
        return self.data.length - self.depth + 1


def build_gram(data: TrajectoryData, depth: int, k_u: KernelSpec, k_y: KernelSpec,
               noise: NoiseModel = None) -> GramProblem:
    """Assemble the n-by-n window Gram matrix.

    The full T-by-T per-sample kernel blocks are computed once per channel
    and the depth-L window sums read off along shifted diagonals; the upper
    triangle is mirrored so the stored matrix is exactly symmetric.
    """
    depth = int(depth)
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if data.length < depth:
        raise InsufficientDataError(
            f"trajectory of length {data.length} is shorter than depth {depth}"
        )
    block = _data_data_block(k_u, data.u, None) + _data_data_block(k_y, data.y, noise)
    gram = _window_sum(block, depth)
    gram = np.triu(gram) + np.triu(gram, 1).T
    if not np.all(np.isfinite(gram)):
        raise NumericOverflowError("gram matrix contains non-finite entries")
    gram.setflags(write=False)
    return GramProblem(data=data, depth=depth, k_u=k_u, k_y=k_y, gram=gram, noise=noise)


def _input_gram(data: TrajectoryData, depth: int, k_u: KernelSpec) -> np.ndarray:
    depth = int(depth)
    if data.length < depth:
        raise InsufficientDataError(
            f"trajectory of length {data.length} is shorter than depth {depth}"
        )
    block = _data_data_block(k_u, data.u, None)
    gram = _window_sum(block, depth)
    return np.triu(gram) + np.triu(gram, 1).T


def pe_rank(data: TrajectoryData, depth: int, k_u: KernelSpec):
    """Numerical rank of the input-only window Gram matrix.

    Returns (rank, singular_values) with the singular values in descending
    order; rank counts values above TRACE_RANK_TOL * n * sigma_max.
    """
    gram = _input_gram(data, depth, k_u)
    sv = np.linalg.svd(gram, compute_uv=False)
    n = gram.shape[0]
    if sv.size == 0 or sv[0] == 0.0:
        return 0, sv
    rank = int(np.count_nonzero(sv > TRACE_RANK_TOL * n * sv[0]))
    return rank, sv


def pe_trace_score(data: TrajectoryData, depth: int, k_u: KernelSpec) -> float:
    """trace(K_u) / (L * n): a normalized input-informativeness heuristic.

    Only meaningful for comparing data sets under one kernel; it is not a
    rank bound.
    """
    depth = int(depth)
    if data.length < depth:
        raise InsufficientDataError(
            f"trajectory of length {data.length} is shorter than depth {depth}"
        )
    diag = _accel.self_eval(_accel.encode(k_u), data.u)
    csum = np.concatenate(([0.0], np.cumsum(diag)))
    n = data.length - depth + 1
    trace = float((csum[depth:] - csum[:-depth])[:n].sum())
    return trace / (depth * n)


# --- trajectory CSV format ------------------------------------------------


def _header(n_u: int, n_y: int) -> str:
    cols = ["t"]
    cols += [f"u{i + 1}" for i in range(n_u)]
    cols += [f"y{i + 1}" for i in range(n_y)]
    return ",".join(cols)


def write_trajectory_csv(path, data: TrajectoryData) -> None:
    """Write `t,u1..,y1..` rows at full float precision (round-trip exact)."""
    with open(path, "w", newline="") as fh:
        fh.write(_header(data.n_u, data.n_y) + "\n")
        for i in range(data.length):
            cells = [repr(i * data.dt)]
            cells += [repr(float(v)) for v in data.u[i]]
            cells += [repr(float(v)) for v in data.y[i]]
            fh.write(",".join(cells) + "\n")


def read_trajectory_table(path):
    """Raw trajectory table as (t, u, y) arrays; empty cells parse as NaN."""
    with open(path, "r", newline="") as fh:
        lines = [line.rstrip("\n").rstrip("\r") for line in fh]
    lines = [line for line in lines if line != ""]
    if not lines:
        raise ValueError(f"{path}: empty trajectory file")
    names = lines[0].split(",")
    n_u = sum(1 for c in names if c.startswith("u"))
    n_y = sum(1 for c in names if c.startswith("y"))
    if names != _header(n_u, n_y).split(","):
        raise ValueError(f"{path}: malformed header {lines[0]!r}")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 1 + n_u + n_y:
            raise ValueError(f"{path}:{ln}: expected {1 + n_u + n_y} cells")
        rows.append([float(c) if c != "" else math.nan for c in cells])
    table = np.asarray(rows, dtype=float)
    return table[:, 0], table[:, 1 : 1 + n_u], table[:, 1 + n_u :]


def read_trajectory_csv(path) -> TrajectoryData:
    """Parse and validate a trajectory CSV written by write_trajectory_csv."""
    t, u, y = read_trajectory_table(path)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y)) and np.all(np.isfinite(t))):
        raise ValueError(f"{path}: trajectory contains non-finite values")
    if t.shape[0] >= 2:
        steps = np.diff(t)
        dt = float(steps[0])
        if dt <= 0 or not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
            raise ValueError(f"{path}: time column is not uniformly spaced")
    else:
        dt = 1.0
    return TrajectoryData(u=u, y=y, dt=dt)
