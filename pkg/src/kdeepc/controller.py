"""Receding-horizon predictive control over the membership residual.

Each step solves the optimistic bi-level problem "minimize the stage cost
subject to the plan being residual-optimal" by penalty homotopy: the stage
cost plus rho * residual is minimized over (g, planned inputs, planned
outputs) for an increasing schedule of rho, warm-starting every stage from
the previous one.  The weights g are eliminated exactly inside every stage
evaluation (the residual is quadratic in them), which keeps the iteration
on the well-scaled trajectory variables.  Input boxes are enforced by
projection inside the line search, so every iterate is exactly feasible.
After the last stage a restoration solve re-minimizes the residual at the
final inputs, and the returned point is the cheapest lower-level-certified
candidate among the restored iterate, the data-window initialization and
the shifted warm start; when nothing certifies, the restored iterate is
returned flagged non-certified.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from ._residual import ResidualEngine
from .errors import DivergenceError, SolverFailureError
from .hankel import GramProblem
from .optimize import minimize
from .plants import PlantModel, output, step
from .predictor import SolverSettings, WeightSolver

BILEVEL_TOL_SCALE = 1e-6       # certification: residual <= scale * k(v~, v~)
DEFAULT_PENALTIES = (1e2, 1e3, 1e4, 1e5)
SOFT_OUTPUT_WEIGHT = 1e3       # quadratic hinge weight for optional output boxes
SCAN_CANDIDATES = 25           # nearest data windows ranked by plan cost


def _weight_matrix(w, dim, name):
    arr = np.atleast_2d(np.asarray(w, dtype=float))
    if arr.shape == (1, 1) and dim != 1:
        arr = arr[0, 0] * np.eye(dim)
    if arr.shape != (dim, dim):
        raise ValueError(f"{name} must be ({dim}, {dim}) or scalar, got {arr.shape}")
    if not np.allclose(arr, arr.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(arr).min() < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")
    return arr


def _box(box, dim, name):
    if box is None:
        return None
    lower, upper = box
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (dim,)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (dim,)).copy()
    if not np.all(lower < upper):
        raise ValueError(f"{name} lower bounds must be below upper bounds")
    return lower, upper


@dataclass(frozen=True, eq=False)
class MpcProblem:
    """Stage cost, constraints and solver settings around one Gram problem."""

    gram: GramProblem
    t_context: int
    horizon: int
    q: np.ndarray
    r: np.ndarray
    y_ref: np.ndarray
    u_box: tuple = None
    y_box: tuple = None
    penalties: tuple = DEFAULT_PENALTIES
    settings: SolverSettings = SolverSettings()

    def __post_init__(self):
        data = self.gram.data
        t_context = int(self.t_context)
        horizon = int(self.horizon)
        if t_context < 1 or horizon < 1:
            raise ValueError("t_context and horizon must be >= 1")
        if t_context + horizon != self.gram.depth:
            raise ValueError(
                f"t_context + horizon = {t_context + horizon} must equal "
                f"the gram depth {self.gram.depth}"
            )
        penalties = tuple(float(p) for p in self.penalties)
        if len(penalties) == 0 or any(p <= 0 for p in penalties):
            raise ValueError("the penalty schedule must be positive")
        if any(b >= a for a, b in zip(penalties[1:], penalties)):
            raise ValueError("the penalty schedule must be strictly increasing")
        y_ref = np.atleast_2d(np.asarray(self.y_ref, dtype=float))
        if y_ref.shape[1] != data.n_y:
            raise ValueError("y_ref dimension does not match the data outputs")
        object.__setattr__(self, "t_context", t_context)
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "q", _weight_matrix(self.q, data.n_y, "Q"))
        object.__setattr__(self, "r", _weight_matrix(self.r, data.n_u, "R"))
        object.__setattr__(self, "y_ref", y_ref)
        object.__setattr__(self, "u_box", _box(self.u_box, data.n_u, "u_box"))
        object.__setattr__(self, "y_box", _box(self.y_box, data.n_y, "y_box"))
        object.__setattr__(self, "penalties", penalties)


@dataclass(frozen=True)
class StageDiagnostics:
    rho: float
    iterations: int
    residual: float
    cost: float
    converged: bool


@dataclass(frozen=True, eq=False)
class MpcStepResult:
    u_plan: np.ndarray
    y_plan: np.ndarray
    g: np.ndarray
    residual: float
    cost: float
    certified: bool
    stages: tuple


class _StageCost:
    """sum_j (y_j - ref_j)' Q (y_j - ref_j) + u_j' R u_j, plus the optional
    soft quadratic hinge on output boxes."""

    def __init__(self, problem: MpcProblem, y_ref: np.ndarray):
        self.q = problem.q
        self.r = problem.r
        self.y_ref = y_ref
        self.y_box = problem.y_box

    def value(self, u_plan, y_plan) -> float:
        dy = y_plan - self.y_ref
        total = float(np.einsum("ij,jk,ik->", dy, self.q, dy))
        total += float(np.einsum("ij,jk,ik->", u_plan, self.r, u_plan))
        if self.y_box is not None:
            lower, upper = self.y_box
            total += SOFT_OUTPUT_WEIGHT * float(
                (np.clip(lower - y_plan, 0.0, None) ** 2).sum()
                + (np.clip(y_plan - upper, 0.0, None) ** 2).sum()
            )
        return total

    def grads(self, u_plan, y_plan):
        grad_u = 2.0 * u_plan @ self.r
        grad_y = 2.0 * (y_plan - self.y_ref) @ self.q
        if self.y_box is not None:
            lower, upper = self.y_box
            grad_y = grad_y + 2.0 * SOFT_OUTPUT_WEIGHT * (
                np.clip(y_plan - upper, 0.0, None) - np.clip(lower - y_plan, 0.0, None)
            )
        return grad_u, grad_y


def _scan_candidate(problem: MpcProblem, cost: _StageCost, u_ini, y_ini):
    """Best data-window start: nearest contexts, cheapest in-box plan."""
    data = problem.gram.data
    n = problem.gram.n_cols
    t_c = problem.t_context
    sw_u = np.lib.stride_tricks.sliding_window_view(data.u, t_c, axis=0)[:n]
    sw_y = np.lib.stride_tricks.sliding_window_view(data.y, t_c, axis=0)[:n]
    dist = ((sw_u - u_ini.T[None]) ** 2).sum(axis=(1, 2))
    dist += ((sw_y - y_ini.T[None]) ** 2).sum(axis=(1, 2))
    order = np.argsort(dist, kind="stable")[:SCAN_CANDIDATES]
    best = None
    for j in order:
        u_plan = data.u[j + t_c : j + problem.gram.depth].copy()
        y_plan = data.y[j + t_c : j + problem.gram.depth].copy()
        if problem.u_box is not None:
            lower, upper = problem.u_box
            u_plan = np.clip(u_plan, lower, upper)
        plan_cost = cost.value(u_plan, y_plan)
        if best is None or plan_cost < best[0]:
            g = np.zeros(n)
            g[j] = 1.0
            best = (plan_cost, g, u_plan, y_plan)
    plan_cost, g, u_plan, y_plan = best
    return g, u_plan, y_plan


def solve_step(problem: MpcProblem, u_ini, y_ini, y_ref=None,
               warm_start=None) -> MpcStepResult:
    """One receding-horizon solve from the measured context.

    ``y_ref`` overrides the horizon reference (defaults to the problem's
    first `horizon` rows); ``warm_start`` is an optional (g, u_plan, y_plan)
    triple, typically the previous step's shifted plan.
    """
    data = problem.gram.data
    n = problem.gram.n_cols
    t_c, horizon = problem.t_context, problem.horizon
    n_u, n_y = data.n_u, data.n_y
    u_ini = np.atleast_2d(np.asarray(u_ini, dtype=float))
    y_ini = np.atleast_2d(np.asarray(y_ini, dtype=float))
    if u_ini.shape != (t_c, n_u) or y_ini.shape != (t_c, n_y):
        raise ValueError("context lengths/dimensions do not match the problem")
    if y_ref is None:
        if problem.y_ref.shape[0] < horizon and problem.y_ref.shape[0] != 1:
            raise ValueError("problem.y_ref is shorter than the horizon")
        y_ref = np.broadcast_to(
            problem.y_ref if problem.y_ref.shape[0] == 1 else problem.y_ref[:horizon],
            (horizon, n_y),
        )
    else:
        y_ref = np.broadcast_to(
            np.atleast_2d(np.asarray(y_ref, dtype=float)), (horizon, n_y)
        )

    engine = ResidualEngine(problem.gram, u_ini, y_ini, u_tail=None)
    solver = WeightSolver(problem.gram)
    cost = _StageCost(problem, y_ref)
    settings = problem.settings

    lower = upper = None
    if problem.u_box is not None:
        box_lo, box_hi = problem.u_box
        lower = np.concatenate(
            [np.tile(box_lo, horizon), np.full(horizon * n_y, -np.inf)]
        )
        upper = np.concatenate(
            [np.tile(box_hi, horizon), np.full(horizon * n_y, np.inf)]
        )

    def unpack(z):
        u_plan = z[: horizon * n_u].reshape(horizon, n_u)
        y_plan = z[horizon * n_u :].reshape(horizon, n_y)
        return u_plan, y_plan

    def candidate_metrics(g, u_plan, y_plan):
        res = engine.value(g, y_plan, u_plan)
        return res, cost.value(u_plan, y_plan), engine.kvv(y_plan, u_plan)

    scan = _scan_candidate(problem, cost, u_ini, y_ini)
    candidates = [(*candidate_metrics(*scan), scan)]
    start = scan
    if warm_start is not None:
        warm = tuple(np.asarray(part, dtype=float).copy() for part in warm_start)
        if problem.u_box is not None:
            warm = (warm[0], np.clip(warm[1], *problem.u_box), warm[2])
        candidates.append((*candidate_metrics(*warm), warm))
        rho0 = problem.penalties[0]
        scan_score = candidates[0][1] + rho0 * candidates[0][0]
        warm_score = candidates[1][1] + rho0 * candidates[1][0]
        if warm_score < scan_score:
            start = warm

    stages = []
    z = np.concatenate([start[1].ravel(), start[2].ravel()])
    aborted_stages = 0
    for rho in problem.penalties:

        def penalized(zz, rho=rho):
            # weights eliminated exactly per evaluation (variable projection):
            # the stage iteration runs on the well-scaled (u_plan, y_plan) only
            u_plan, y_plan = unpack(zz)
            cross, kvv = engine.assemble(y_plan, u_plan)
            g = solver.regularized(cross)
            res = engine.value_from(g, cross, kvv) + solver.eps * float(g @ g)
            grad_y, grad_u = engine.tail_grads(g, y_plan, u_plan)
            val = cost.value(u_plan, y_plan) + rho * res
            cu, cy = cost.grads(u_plan, y_plan)
            grad = np.concatenate(
                [(cu + rho * grad_u).ravel(), (cy + rho * grad_y).ravel()]
            )
            return val, grad

        result = minimize(penalized, z, max_iters=settings.max_iters,
                          grad_tol=settings.grad_tol, lower=lower, upper=upper)
        if result.aborted:
            aborted_stages += 1
            stages.append(StageDiagnostics(rho, result.iterations, math.inf,
                                           math.inf, False))
            continue
        z = result.x
        u_plan, y_plan = unpack(z)
        cross, kvv = engine.assemble(y_plan, u_plan)
        g = solver.regularized(cross)
        g_exact = solver.min_norm(cross)
        if engine.value_from(g_exact, cross, kvv) < engine.value_from(g, cross, kvv):
            g = g_exact
        stages.append(
            StageDiagnostics(
                rho,
                result.iterations,
                engine.value_from(g, cross, kvv),
                cost.value(u_plan, y_plan),
                result.converged,
            )
        )

    if aborted_stages == len(problem.penalties):
        raise SolverFailureError(
            "every penalty stage aborted on non-finite objectives",
            diagnostics=stages,
        )

    # restoration: exact lower-level solve at the final inputs
    u_plan, y_plan = unpack(z)
    g = solver.regularized(engine.cross_vector(y_plan, u_plan))
    restored = _restore(engine, solver, settings, g, u_plan, y_plan)
    candidates.append((*candidate_metrics(*restored), restored))

    certified = [
        cand for cand in candidates if cand[0] <= BILEVEL_TOL_SCALE * max(cand[2], 1e-30)
    ]
    if certified:
        res, plan_cost, _, (g, u_plan, y_plan) = min(certified, key=lambda c: c[1])
        flag = True
    else:
        res, plan_cost, _, (g, u_plan, y_plan) = candidates[-1]
        flag = False
    if problem.u_box is not None:
        u_plan = np.clip(u_plan, *problem.u_box)
    return MpcStepResult(
        u_plan=u_plan,
        y_plan=y_plan,
        g=g,
        residual=res,
        cost=plan_cost,
        certified=flag,
        stages=tuple(stages),
    )


def _restore(engine: ResidualEngine, solver: WeightSolver, settings, g, u_plan, y_plan):
    """Minimize the residual over (g, y_plan) at fixed inputs (warm-started)."""

    def reduced(yflat):
        y_tail = yflat.reshape(y_plan.shape)
        cross, kvv = engine.assemble(y_tail, u_plan)
        gg = solver.regularized(cross)
        val = engine.value_from(gg, cross, kvv) + solver.eps * float(gg @ gg)
        grad_y, _ = engine.tail_grads(gg, y_tail, u_plan)
        return val, grad_y.ravel()

    result = minimize(reduced, y_plan.ravel(), max_iters=settings.max_iters,
                      grad_tol=settings.grad_tol)
    y_best = y_plan if result.aborted else result.x.reshape(y_plan.shape)
    cross, kvv = engine.assemble(y_best, u_plan)
    g_reg = solver.regularized(cross)
    g_exact = solver.min_norm(cross)
    if engine.value_from(g_exact, cross, kvv) <= engine.value_from(g_reg, cross, kvv):
        g_new = g_exact
    else:
        g_new = g_reg
    if engine.value_from(g_new, cross, kvv) <= engine.value(g, y_best, u_plan):
        return g_new, u_plan, y_best
    return g, u_plan, y_best


@dataclass(frozen=True, eq=False)
class ClosedLoopLog:
    """Per-step record of a closed-loop run (normalized output units)."""

    t: np.ndarray
    u: np.ndarray
    y: np.ndarray
    y_ref: np.ndarray
    residual: np.ndarray
    solve_ms: np.ndarray
    certified: np.ndarray

    @property
    def steps(self) -> int:
        return self.t.shape[0]


def run_closed_loop(problem: MpcProblem, plant: PlantModel, x0, steps: int,
                    y_offset: float = 0.0, y_scale: float = 1.0) -> ClosedLoopLog:
    """Receding-horizon simulation against the plant.

    The initial context comes from holding zero input for t_context steps
    from x0.  At each step the first planned input is applied for one
    sampling interval and the context shifts by one sample.  Plant outputs
    are mapped through (y - y_offset) / y_scale before they enter the
    controller, matching data generated with the same normalization.
    problem.y_ref holds the reference schedule indexed by closed-loop step
    (edge-padded when shorter than steps + horizon).
    """
    steps = int(steps)
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    n_u, n_y = problem.gram.data.n_u, problem.gram.data.n_y
    if plant.n_u != n_u or plant.n_y != n_y:
        raise ValueError("plant dimensions do not match the problem data")
    t_c, horizon = problem.t_context, problem.horizon
    scale = float(y_scale)
    if scale == 0.0:
        raise ValueError("y_scale must be nonzero")

    ref = np.atleast_2d(np.asarray(problem.y_ref, dtype=float))
    needed = steps + horizon
    if ref.shape[0] < needed:
        pad = np.repeat(ref[-1][None, :], needed - ref.shape[0], axis=0)
        ref = np.vstack([ref, pad])

    x = np.asarray(x0, dtype=float)
    u_ctx = np.zeros((t_c, n_u))
    y_ctx = np.zeros((t_c, n_y))
    zero_u = np.zeros(n_u)
    for i in range(t_c):
        try:
            x, y_raw = step(plant, x, zero_u)
        except DivergenceError as exc:
            raise DivergenceError(f"warmup diverged: {exc}", step=i - t_c) from None
        y_ctx[i] = (y_raw - y_offset) / scale

    log_t = np.empty(steps)
    log_u = np.empty((steps, n_u))
    log_y = np.empty((steps, n_y))
    log_ref = np.empty((steps, n_y))
    log_res = np.empty(steps)
    log_ms = np.empty(steps)
    log_cert = np.empty(steps, dtype=bool)
    warm = None
    for s in range(steps):
        tic = time.perf_counter()
        result = solve_step(problem, u_ctx, y_ctx, y_ref=ref[s : s + horizon],
                            warm_start=warm)
        log_ms[s] = 1e3 * (time.perf_counter() - tic)
        u_apply = result.u_plan[0]
        y_now = (output(plant, x, u_apply) - y_offset) / scale
        try:
            x, _ = step(plant, x, u_apply)
        except DivergenceError as exc:
            raise DivergenceError(f"plant diverged at step {s}: {exc}", step=s) from None
        log_t[s] = (t_c + s) * plant.dt
        log_u[s] = u_apply
        log_y[s] = y_now
        log_ref[s] = ref[s]
        log_res[s] = result.residual
        log_cert[s] = result.certified
        u_ctx = np.vstack([u_ctx[1:], u_apply[None, :]])
        y_ctx = np.vstack([y_ctx[1:], y_now[None, :]])
        warm = (
            result.g,
            np.vstack([result.u_plan[1:], result.u_plan[-1:]]),
            np.vstack([result.y_plan[1:], result.y_plan[-1:]]),
        )
    return ClosedLoopLog(t=log_t, u=log_u, y=log_y, y_ref=log_ref,
                         residual=log_res, solve_ms=log_ms, certified=log_cert)


def write_closed_loop_csv(path, log: ClosedLoopLog) -> None:
    """`step,t,u1..,y1..,yref1..,residual,solve_ms` rows, full precision."""
    n_u = log.u.shape[1]
    n_y = log.y.shape[1]
    cols = ["step", "t"]
    cols += [f"u{i + 1}" for i in range(n_u)]
    cols += [f"y{i + 1}" for i in range(n_y)]
    cols += [f"yref{i + 1}" for i in range(n_y)]
    cols += ["residual", "solve_ms"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for s in range(log.steps):
            cells = [str(s), repr(float(log.t[s]))]
            cells += [repr(float(v)) for v in log.u[s]]
            cells += [repr(float(v)) for v in log.y[s]]
            cells += [repr(float(v)) for v in log.y_ref[s]]
            cells += [repr(float(log.residual[s])), repr(float(log.solve_ms[s]))]
            fh.write(",".join(cells) + "\n")
