"""Open-loop prediction by minimizing the span-membership residual.

Given a Gram problem whose window depth splits into a measured prefix plus
a prediction length, and the planned inputs over that prediction length,
the predictor searches for the free future outputs (and column weights g)
with the smallest membership residual.  The residual is quadratic in g, so
the quasi-Newton iteration runs on the free outputs with g eliminated at
every evaluation through the same regularized solve that also provides the
initial point; each local solve then refreshes the weights with an
unregularized minimum-norm solve and polishes jointly over (g, y), where
the gradient stopping rule is evaluated on the full gradient.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from ._residual import ResidualEngine
from .errors import SolverFailureError
from .hankel import GramProblem
from .optimize import gradient_polish, minimize

INIT_RIDGE_SCALE = 1e-8     # regularizer on the weight solve: scale * tr(K)/n
EXACT_SOLVE_CUTOFF = 1e-12  # relative eigenvalue cutoff of the min-norm refresh
RESTART_NOISE_SCALE = 0.1   # initial-output perturbation, in training std units
EARLY_STOP_SCALE = 1e-10    # residual (relative to k(v~,v~)) that ends the multistart
JOINT_POLISH_ITERS = 100


@dataclass(frozen=True)
class SolverSettings:
    """Knobs of the multi-start residual solver (config section `solver`)."""

    restarts: int = 5
    max_iters: int = 500
    grad_tol: float = 1e-8
    ridge: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    restarts_used: int
    converged: bool
    grad_norm: float
    failed_starts: int


@dataclass(frozen=True, eq=False)
class PredictionProblem:
    """A Gram problem plus fixed prefix (u_init, y_init) and planned inputs."""

    gram: GramProblem
    u_init: np.ndarray
    y_init: np.ndarray
    u_future: np.ndarray

    def __post_init__(self):
        data = self.gram.data
        u_init = np.atleast_2d(np.asarray(self.u_init, dtype=float))
        y_init = np.atleast_2d(np.asarray(self.y_init, dtype=float))
        u_future = np.atleast_2d(np.asarray(self.u_future, dtype=float))
        if u_init.shape[1] != data.n_u or u_future.shape[1] != data.n_u:
            raise ValueError("input dimensions do not match the data")
        if y_init.shape[1] != data.n_y:
            raise ValueError("output dimensions do not match the data")
        if u_init.shape[0] != y_init.shape[0]:
            raise ValueError("u_init and y_init must have equal length")
        if u_init.shape[0] < 1 or u_future.shape[0] < 1:
            raise ValueError("prefix and future lengths must be >= 1")
        if u_init.shape[0] + u_future.shape[0] != self.gram.depth:
            raise ValueError(
                f"prefix + future = {u_init.shape[0]} + {u_future.shape[0]} "
                f"must equal the gram depth {self.gram.depth}"
            )
        object.__setattr__(self, "u_init", u_init)
        object.__setattr__(self, "y_init", y_init)
        object.__setattr__(self, "u_future", u_future)

    @property
    def t_measured(self) -> int:
        return self.u_init.shape[0]

    @property
    def t_predict(self) -> int:
        return self.u_future.shape[0]


@dataclass(frozen=True, eq=False)
class PredictionResult:
    y_pred: np.ndarray
    g: np.ndarray
    residual: float
    report: SolverReport


_engines: "weakref.WeakKeyDictionary[PredictionProblem, ResidualEngine]" = (
    weakref.WeakKeyDictionary()
)
_eigs: "weakref.WeakKeyDictionary[GramProblem, tuple]" = weakref.WeakKeyDictionary()


def _engine(problem: PredictionProblem) -> ResidualEngine:
    engine = _engines.get(problem)
    if engine is None:
        engine = ResidualEngine(
            problem.gram, problem.u_init, problem.y_init, u_tail=problem.u_future
        )
        _engines[problem] = engine
    return engine


def gram_eig(gram: GramProblem):
    """Cached eigendecomposition of the (symmetric PSD) Gram matrix."""
    pair = _eigs.get(gram)
    if pair is None:
        lam, vec = np.linalg.eigh(gram.gram)
        pair = (lam, vec)
        _eigs[gram] = pair
    return pair


class WeightSolver:
    """Solves for the residual-optimal column weights at a fixed query.

    ``regularized`` is the ridge solve (K + eps I) g = c with
    eps = INIT_RIDGE_SCALE * tr(K)/n; ``min_norm`` drops the ridge and
    pseudo-inverts K with a relative eigenvalue cutoff.
    """

    def __init__(self, gram: GramProblem):
        lam, vec = gram_eig(gram)
        self._lam = lam
        self._vec = vec
        n = gram.n_cols
        trace = float(np.trace(gram.gram))
        self.eps = max(INIT_RIDGE_SCALE * trace / n, 1e-300)

    def regularized(self, cross: np.ndarray, extra: float = 0.0) -> np.ndarray:
        coeff = (self._vec.T @ cross) / (np.maximum(self._lam, 0.0) + self.eps + extra)
        return self._vec @ coeff

    def min_norm(self, cross: np.ndarray) -> np.ndarray:
        lam_max = max(float(self._lam[-1]), 0.0)
        if lam_max == 0.0:
            return np.zeros_like(cross)
        keep = self._lam > EXACT_SOLVE_CUTOFF * lam_max
        coeff = np.where(keep, (self._vec.T @ cross), 0.0)
        coeff = np.divide(coeff, self._lam, out=coeff, where=keep)
        return self._vec @ coeff


def residual(problem: PredictionProblem, g, y_future) -> float:
    """Membership residual g'Kg + k(v~,v~) - 2 sum_i g_i k(v~,v_i)."""
    return _engine(problem).value(g, y_future)


def residual_grad(problem: PredictionProblem, g, y_future):
    """Analytic gradients (grad_g, grad_y) of the membership residual."""
    _, grad_g, grad_y, _ = _engine(problem).value_and_grad(g, y_future)
    return grad_g, grad_y


def _solve_single(engine: ResidualEngine, solver: WeightSolver, y0, settings,
                  u_tail=None, max_iters=None):
    """One local residual minimization: VarPro descent, weight refresh, polish.

    Returns (g, y_tail, value, iterations, converged, grad_norm, aborted).
    """
    free_y = engine.free_y
    n_y = engine.n_y
    max_iters = settings.max_iters if max_iters is None else max_iters
    ridge = float(settings.ridge)

    def reduced(yflat):
        # g eliminated through the ridge solve; with the ridge included in
        # the reported value, grad_y is the exact reduced gradient.
        y_tail = yflat.reshape(free_y, n_y)
        cross, kvv = engine.assemble(y_tail, u_tail)
        g = solver.regularized(cross, extra=ridge)
        value = engine.value_from(g, cross, kvv) + (solver.eps + ridge) * float(g @ g)
        grad_y, _ = engine.tail_grads(g, y_tail, u_tail)
        return value, grad_y.ravel()

    outer = minimize(reduced, np.asarray(y0, dtype=float).ravel(),
                     max_iters=max_iters, grad_tol=settings.grad_tol)
    if outer.aborted:
        return None, None, np.inf, outer.iterations, False, np.inf, True

    y_tail = outer.x.reshape(free_y, n_y)
    cross, kvv = engine.assemble(y_tail, u_tail)
    g = solver.regularized(cross, extra=ridge)
    value = engine.value_from(g, cross, kvv)
    g_exact = solver.min_norm(cross)
    value_exact = engine.value_from(g_exact, cross, kvv)
    if value_exact < value:
        g, value = g_exact, value_exact

    # joint polish over (g, y): the stopping rule applies to the full gradient
    n = engine.n

    def joint(z):
        gz = z[:n]
        yz = z[n:].reshape(free_y, n_y)
        val, grad_g, grad_y, _ = engine.value_and_grad(gz, yz, u_tail)
        if ridge:
            val += ridge * float(gz @ gz)
            grad_g = grad_g + 2.0 * ridge * gz
        return val, np.concatenate([grad_g, grad_y.ravel()])

    polish = minimize(joint, np.concatenate([g, y_tail.ravel()]),
                      max_iters=JOINT_POLISH_ITERS, grad_tol=settings.grad_tol)
    iterations = outer.iterations + polish.iterations
    converged = polish.converged
    grad_norm = polish.grad_norm
    if not polish.aborted and polish.fun <= value:
        g = polish.x[:n]
        y_tail = polish.x[n:].reshape(free_y, n_y)
        value = polish.fun

    # near an exact-membership zero the objective saturates at its float
    # floor before the point does; finish on the gradient instead.  The
    # weights come from the unregularized minimum-norm solve per evaluation,
    # so the output gradient is consistent and its curvature is set by the
    # kernels, not by the Gram spectrum.
    kvv_here = engine.kvv(y_tail, u_tail)
    if not converged and value <= 1e-6 * (1.0 + abs(kvv_here)):

        def reduced_exact(yflat):
            yz = yflat.reshape(free_y, n_y)
            cross, kvv = engine.assemble(yz, u_tail)
            gz = solver.min_norm(cross)
            grad_y, _ = engine.tail_grads(gz, yz, u_tail)
            return engine.value_from(gz, cross, kvv), grad_y.ravel()

        endgame = gradient_polish(reduced_exact, y_tail.ravel(), max_iters=60)
        iterations += endgame.iterations
        if not endgame.aborted and endgame.iterations > 0:
            y_candidate = endgame.x.reshape(free_y, n_y)
            cross = engine.cross_vector(y_candidate, u_tail)
            g_candidate = solver.min_norm(cross)
            val_j, grad_j = joint(np.concatenate([g_candidate, y_candidate.ravel()]))
            gn_j = float(np.abs(grad_j).max(initial=0.0))
            if gn_j <= grad_norm:
                g, y_tail = g_candidate, y_candidate
                value = engine.value(g, y_tail, u_tail)
                grad_norm = gn_j
                converged = grad_norm <= settings.grad_tol * (1.0 + abs(value))
    return g, y_tail, value, iterations, converged, grad_norm, False


def predict(problem: PredictionProblem, settings: SolverSettings = SolverSettings()
            ) -> PredictionResult:
    """Jointly minimize the residual over (g, future outputs), multi-start.

    The first start holds the last measured output constant; further starts
    perturb it with Gaussian noise scaled to the training-output spread.
    Deterministic for a fixed settings seed.  Raises SolverFailureError when
    every start aborts on non-finite objectives.
    """
    engine = _engine(problem)
    solver = WeightSolver(problem.gram)
    t_p = problem.t_predict
    hold = np.repeat(problem.y_init[-1][None, :], t_p, axis=0)
    y_std = problem.gram.data.y.std(axis=0)
    rng = np.random.default_rng([settings.seed, 1])

    best = None
    total_iters = 0
    failures = 0
    diagnostics = []
    restarts = max(int(settings.restarts), 1)
    used = 0
    for start in range(restarts):
        used += 1
        y0 = hold
        if start > 0:
            y0 = hold + RESTART_NOISE_SCALE * y_std * rng.standard_normal(hold.shape)
        g, y_tail, value, iters, converged, grad_norm, aborted = _solve_single(
            engine, solver, y0, settings
        )
        total_iters += iters
        if aborted:
            failures += 1
            diagnostics.append(f"start {start}: aborted on non-finite objective")
            continue
        if best is None or value < best[2]:
            best = (g, y_tail, value, converged, grad_norm)
        # a residual at the floor is a global minimum (the true value is >= 0):
        # further restarts cannot improve it
        if value <= EARLY_STOP_SCALE * (1.0 + engine.kvv(y_tail)):
            break

    if best is None:
        raise SolverFailureError(
            f"all {restarts} starts failed", diagnostics=diagnostics
        )
    g, y_tail, value, converged, grad_norm = best
    report = SolverReport(
        iterations=total_iters,
        restarts_used=used,
        converged=converged,
        grad_norm=grad_norm,
        failed_starts=failures,
    )
    return PredictionResult(y_pred=y_tail, g=g, residual=value, report=report)
