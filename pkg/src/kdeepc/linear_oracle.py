"""Classical Hankel-span machinery for LTI systems.

These routines realize the linear special case of the kernelized pipeline
directly on numeric Hankel matrices and serve as its independent
correctness oracle: prediction by consistent least squares over the column
span, and control as an equality-constrained quadratic program.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, InfeasibleError, NotInBehaviorError
from .hankel import TrajectoryData

CONSISTENCY_TOL = 1e-6  # relative residual above which a query is rejected
ACTIVE_SET_MAX_PASSES = 50


@dataclass(frozen=True, eq=False)
class LtiSystem:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        c = np.atleast_2d(np.asarray(self.c, dtype=float))
        d = np.atleast_2d(np.asarray(self.d, dtype=float))
        if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
            raise ValueError("A must be square and B conformable")
        if c.shape[1] != a.shape[0] or d.shape != (c.shape[0], b.shape[1]):
            raise ValueError("C/D dimensions inconsistent")
        for name, arr in (("a", a), ("b", b), ("c", c), ("d", d)):
            object.__setattr__(self, name, arr)

    @property
    def n_x(self) -> int:
        return self.a.shape[0]

    @property
    def n_u(self) -> int:
        return self.b.shape[1]

    @property
    def n_y(self) -> int:
        return self.c.shape[0]


def controllability_rank(system: LtiSystem) -> int:
    blocks = [system.b]
    for _ in range(system.n_x - 1):
        blocks.append(system.a @ blocks[-1])
    return int(np.linalg.matrix_rank(np.hstack(blocks)))


def random_controllable(n_x: int, n_u: int, n_y: int, seed: int = 0,
                        radius: float = 0.9, max_tries: int = 50) -> LtiSystem:
    """Random stable-ish controllable system; spectral radius scaled to `radius`."""
    if not 0.0 < radius < 1.0:
        raise ValueError(f"radius must lie in (0, 1), got {radius}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        a = rng.standard_normal((n_x, n_x))
        rho = max(abs(np.linalg.eigvals(a)))
        if rho > 0:
            a *= radius / rho
        b = rng.standard_normal((n_x, n_u))
        c = rng.standard_normal((n_y, n_x))
        d = 0.1 * rng.standard_normal((n_y, n_u))
        system = LtiSystem(a, b, c, d)
        if controllability_rank(system) == n_x:
            return system
    raise GenerationError(
        f"no controllable system found in {max_tries} draws (n_x={n_x}, n_u={n_u})"
    )


def simulate(system: LtiSystem, x0, u) -> np.ndarray:
    """Outputs y_k = C x_k + D u_k under the given input record."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    x = np.asarray(x0, dtype=float)
    ys = np.empty((u.shape[0], system.n_y))
    for k in range(u.shape[0]):
        ys[k] = system.c @ x + system.d @ u[k]
        x = system.a @ x + system.b @ u[k]
    return ys


def pe_input(system: LtiSystem, depth: int, seed: int = 0, margin: int = 3) -> np.ndarray:
    """I.i.d. Gaussian input long enough for persistent excitation with margin."""
    rng = np.random.default_rng([seed, 0])
    length = margin * (system.n_x + depth) * system.n_u
    return rng.standard_normal((length, system.n_u))


def hankel_matrix(samples: np.ndarray, depth: int) -> np.ndarray:
    """Numeric depth-L Hankel matrix; row block k holds samples k..k+n-1."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    length, dim = samples.shape
    if length < depth:
        raise ValueError(f"need at least {depth} samples, got {length}")
    n = length - depth + 1
    out = np.empty((depth * dim, n))
    for k in range(depth):
        out[k * dim : (k + 1) * dim, :] = samples[k : k + n].T
    return out


def stacked_hankel(data: TrajectoryData, depth: int) -> np.ndarray:
    """[H_L(u); H_L(y)]: input rows stacked over output rows."""
    return np.vstack([hankel_matrix(data.u, depth), hankel_matrix(data.y, depth)])


def deepc_predict(data: TrajectoryData, t_measured: int, t_predict: int,
                  u_init, y_init, u_future) -> np.ndarray:
    """Predict future outputs from the Hankel column span.

    Solves the minimum-norm least squares for g over the constrained rows
    (all inputs plus the measured output prefix) and reads the prediction
    off the free output rows; rejects queries whose constrained system is
    inconsistent beyond CONSISTENCY_TOL (not persistently excited, wrong
    depth, or simply not a trajectory of the data-generating system).
    """
    depth = int(t_measured) + int(t_predict)
    u_init = np.atleast_2d(np.asarray(u_init, dtype=float))
    y_init = np.atleast_2d(np.asarray(y_init, dtype=float))
    u_future = np.atleast_2d(np.asarray(u_future, dtype=float))
    if u_init.shape != (t_measured, data.n_u) or u_future.shape != (t_predict, data.n_u):
        raise ValueError("query input lengths/dimensions are inconsistent")
    if y_init.shape != (t_measured, data.n_y):
        raise ValueError("query output prefix length/dimension is inconsistent")
    h_u = hankel_matrix(data.u, depth)
    h_y = hankel_matrix(data.y, depth)
    constrained = np.vstack([h_u, h_y[: t_measured * data.n_y]])
    target = np.concatenate(
        [u_init.ravel(), u_future.ravel(), y_init.ravel()]
    )
    g, _, _, _ = np.linalg.lstsq(constrained, target, rcond=None)
    relative = np.linalg.norm(constrained @ g - target) / max(
        np.linalg.norm(target), 1e-30
    )
    if relative > CONSISTENCY_TOL:
        raise NotInBehaviorError(
            f"constrained rows inconsistent (relative residual {relative:.3e}); "
            "the query is not in the data span"
        )
    prediction = h_y[t_measured * data.n_y :] @ g
    return prediction.reshape(t_predict, data.n_y)


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(mat)
    lam = np.clip(lam, 0.0, None)
    return (vec * np.sqrt(lam)) @ vec.T


def deepc_control(data: TrajectoryData, t_context: int, horizon: int,
                  q, r, y_ref, u_init, y_init, u_box=None):
    """Optimal plan over the Hankel column span (convex reference tracking).

    Minimizes sum_j (y_j - y_ref_j)' Q (y_j - y_ref_j) + u_j' R u_j over all
    (u_plan, y_plan) consistent with the span and the measured context;
    input box constraints are handled by an active-set loop that pins
    violated coordinates to their bounds.  Returns (u_plan, y_plan).
    """
    depth = int(t_context) + int(horizon)
    n_u, n_y = data.n_u, data.n_y
    u_init = np.atleast_2d(np.asarray(u_init, dtype=float))
    y_init = np.atleast_2d(np.asarray(y_init, dtype=float))
    if u_init.shape != (t_context, n_u) or y_init.shape != (t_context, n_y):
        raise ValueError("context lengths/dimensions are inconsistent")
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    y_ref = np.broadcast_to(
        np.atleast_2d(np.asarray(y_ref, dtype=float)), (horizon, n_y)
    )

    h_u = hankel_matrix(data.u, depth)
    h_y = hankel_matrix(data.y, depth)
    context_rows = np.vstack([h_u[: t_context * n_u], h_y[: t_context * n_y]])
    context_target = np.concatenate([u_init.ravel(), y_init.ravel()])
    future_u = h_u[t_context * n_u :]
    future_y = h_y[t_context * n_y :]

    sq_r = np.kron(np.eye(horizon), _sqrt_psd(r))
    sq_q = np.kron(np.eye(horizon), _sqrt_psd(q))
    cost_rows = np.vstack([sq_r @ future_u, sq_q @ future_y])
    cost_target = np.concatenate([np.zeros(horizon * n_u), sq_q @ y_ref.ravel()])

    lower = upper = None
    if u_box is not None:
        lower, upper = u_box
        lower = np.broadcast_to(np.asarray(lower, dtype=float), (horizon, n_u)).ravel()
        upper = np.broadcast_to(np.asarray(upper, dtype=float), (horizon, n_u)).ravel()

    pinned = np.zeros(horizon * n_u, dtype=bool)
    pinned_vals = np.zeros(horizon * n_u)
    for _ in range(ACTIVE_SET_MAX_PASSES):
        eq_rows = context_rows
        eq_target = context_target
        if pinned.any():
            eq_rows = np.vstack([context_rows, future_u[pinned]])
            eq_target = np.concatenate([context_target, pinned_vals[pinned]])
        g0, _, _, _ = np.linalg.lstsq(eq_rows, eq_target, rcond=None)
        relative = np.linalg.norm(eq_rows @ g0 - eq_target) / max(
            np.linalg.norm(eq_target), 1e-30
        )
        if relative > CONSISTENCY_TOL:
            raise InfeasibleError(
                f"context/bound constraints inconsistent (relative residual {relative:.3e})"
            )
        _, sv, vt = np.linalg.svd(eq_rows, full_matrices=True)
        rank = int((sv > max(eq_rows.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0)).sum())
        null = vt[rank:].T
        if null.shape[1] == 0:
            g = g0
        else:
            z, _, _, _ = np.linalg.lstsq(cost_rows @ null, cost_target - cost_rows @ g0,
                                         rcond=None)
            g = g0 + null @ z
        u_flat = future_u @ g
        if lower is None:
            break
        viol_low = ~pinned & (u_flat < lower - 1e-9)
        viol_high = ~pinned & (u_flat > upper + 1e-9)
        if not (viol_low.any() or viol_high.any()):
            break
        pinned_vals = np.where(viol_low, lower, pinned_vals)
        pinned_vals = np.where(viol_high, upper, pinned_vals)
        pinned = pinned | viol_low | viol_high
    else:
        raise InfeasibleError("active-set loop did not settle")

    u_flat = future_u @ g
    if lower is not None:
        u_flat = np.clip(u_flat, lower, upper)
    u_plan = u_flat.reshape(horizon, n_u)
    y_plan = (future_y @ g).reshape(horizon, n_y)
    return u_plan, y_plan
