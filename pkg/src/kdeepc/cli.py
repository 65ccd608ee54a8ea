"""Command-line entry point for reproducible experiment runs.

Commands: gen-data, predict, control, check-pe.  All configuration lives in
one JSON document (sections: plant, kernel, problem, solver, noise, io);
every output is a CSV so runs reproduce byte-for-byte from (config, seed,
data files).  Exit codes: 0 success, 1 argument/config error, 2 solver
failure, 3 PE-check failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .controller import MpcProblem, run_closed_loop, write_closed_loop_csv
from .errors import (
    DivergenceError,
    KdeepcError,
    NumericOverflowError,
    SolverFailureError,
)
from .hankel import (
    build_gram,
    pe_rank,
    pe_trace_score,
    read_trajectory_csv,
    read_trajectory_table,
    write_trajectory_csv,
)
from .kernels import (
    kernel_from_config,
    kernel_to_config,
    linear_kernel,
    noise_from_config,
    noise_to_config,
)
from .plants import (
    BilinearMotor,
    DriftingGaussian,
    ExcitationSpec,
    Lti,
    Pendulum,
    PlantModel,
    Prbs,
    UniformRandom,
    default_x0,
    generate,
)
from .predictor import PredictionProblem, SolverSettings, predict

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_PE = 3
EXIT_IO = 4


def _require_keys(obj, allowed, where):
    extra = set(obj) - set(allowed)
    if extra:
        raise ValueError(f"unexpected keys {sorted(extra)} in {where} section")


@dataclass(frozen=True)
class PlantSection:
    kind: str = "pendulum"
    dt: float = 0.04
    substeps: int = 10
    x0: tuple = None
    params: dict = field(default_factory=dict)
    excitation: dict = field(default_factory=lambda: {"kind": "uniform", "lo": -1.0, "hi": 1.0})
    length: int = 500
    y_offset: float = 0.0
    y_scale: float = 1.0
    noise_std: float = 0.0


@dataclass(frozen=True)
class ProblemSection:
    t_past: int = None
    t_future: int = None
    t_context: int = None
    horizon: int = None
    q: object = 1.0
    r: object = 1.0
    y_ref: object = 0.0
    u_box: object = None
    y_box: object = None
    steps: int = 0


@dataclass(frozen=True)
class SolverSection:
    restarts: int = 5
    max_iters: int = 500
    grad_tol: float = 1e-8
    ridge: float = 0.0
    penalty_schedule: tuple = (1e2, 1e3, 1e4, 1e5)


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantSection
    kernel: dict
    problem: ProblemSection
    solver: SolverSection
    noise: object
    seed: int

    def settings(self) -> SolverSettings:
        return SolverSettings(
            restarts=self.solver.restarts,
            max_iters=self.solver.max_iters,
            grad_tol=self.solver.grad_tol,
            ridge=self.solver.ridge,
            seed=self.seed,
        )


def _section(obj, name):
    value = obj.get(name, {})
    if value is None:
        value = {}
    if not isinstance(value, dict):
        raise ValueError(f"config section {name!r} must be an object")
    return value


def config_from_dict(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ValueError("config root must be a JSON object")
    _require_keys(obj, ("plant", "kernel", "problem", "solver", "noise", "io"), "root")

    plant = _section(obj, "plant")
    _require_keys(
        plant,
        ("kind", "dt", "substeps", "x0", "params", "excitation", "length",
         "y_offset", "y_scale", "noise_std"),
        "plant",
    )
    ps = PlantSection(
        kind=str(plant.get("kind", "pendulum")),
        dt=float(plant.get("dt", 0.04)),
        substeps=int(plant.get("substeps", 10)),
        x0=None if plant.get("x0") is None else tuple(float(v) for v in plant["x0"]),
        params=dict(plant.get("params", {})),
        excitation=dict(plant.get("excitation", {"kind": "uniform", "lo": -1.0, "hi": 1.0})),
        length=int(plant.get("length", 500)),
        y_offset=float(plant.get("y_offset", 0.0)),
        y_scale=float(plant.get("y_scale", 1.0)),
        noise_std=float(plant.get("noise_std", 0.0)),
    )
    if ps.kind not in ("pendulum", "motor", "lti"):
        raise ValueError(f"unknown plant kind {ps.kind!r}")

    kernel = _section(obj, "kernel")
    _require_keys(kernel, ("k_u", "k_y"), "kernel")
    if "k_u" not in kernel or "k_y" not in kernel:
        raise ValueError("kernel section needs 'k_u' and 'k_y'")
    kernel_from_config(kernel["k_u"])  # validate now, fail with exit code 1
    kernel_from_config(kernel["k_y"])

    problem = _section(obj, "problem")
    _require_keys(
        problem,
        ("t_past", "t_future", "t_context", "horizon", "q", "r", "y_ref",
         "u_box", "y_box", "steps"),
        "problem",
    )

    def opt_int(key):
        return None if problem.get(key) is None else int(problem[key])

    prs = ProblemSection(
        t_past=opt_int("t_past"),
        t_future=opt_int("t_future"),
        t_context=opt_int("t_context"),
        horizon=opt_int("horizon"),
        q=problem.get("q", 1.0),
        r=problem.get("r", 1.0),
        y_ref=problem.get("y_ref", 0.0),
        u_box=problem.get("u_box"),
        y_box=problem.get("y_box"),
        steps=int(problem.get("steps", 0)),
    )

    solver = _section(obj, "solver")
    _require_keys(
        solver, ("restarts", "max_iters", "grad_tol", "ridge", "penalty_schedule"),
        "solver",
    )
    ss = SolverSection(
        restarts=int(solver.get("restarts", 5)),
        max_iters=int(solver.get("max_iters", 500)),
        grad_tol=float(solver.get("grad_tol", 1e-8)),
        ridge=float(solver.get("ridge", 0.0)),
        penalty_schedule=tuple(float(p) for p in solver.get("penalty_schedule",
                                                            (1e2, 1e3, 1e4, 1e5))),
    )

    noise = noise_from_config(obj.get("noise", {"kind": "none"}))

    io = _section(obj, "io")
    _require_keys(io, ("seed",), "io")
    seed = int(io.get("seed", 0))

    return ExperimentConfig(plant=ps, kernel=dict(kernel), problem=prs,
                            solver=ss, noise=noise, seed=seed)


def config_to_dict(config: ExperimentConfig) -> dict:
    plant = asdict(config.plant)
    plant["x0"] = None if config.plant.x0 is None else list(config.plant.x0)
    return {
        "plant": plant,
        "kernel": {
            "k_u": kernel_to_config(kernel_from_config(config.kernel["k_u"])),
            "k_y": kernel_to_config(kernel_from_config(config.kernel["k_y"])),
        },
        "problem": asdict(config.problem),
        "solver": {
            "restarts": config.solver.restarts,
            "max_iters": config.solver.max_iters,
            "grad_tol": config.solver.grad_tol,
            "ridge": config.solver.ridge,
            "penalty_schedule": list(config.solver.penalty_schedule),
        },
        "noise": noise_to_config(config.noise),
        "io": {"seed": config.seed},
    }


def load_config(path, seed_override=None) -> ExperimentConfig:
    with open(path, "r") as fh:
        obj = json.load(fh)
    if seed_override is not None:
        obj.setdefault("io", {})
        obj["io"]["seed"] = int(seed_override)
    return config_from_dict(obj)


def _build_plant(section: PlantSection) -> PlantModel:
    params = dict(section.params)
    if section.kind == "pendulum":
        kind = Pendulum(**params)
    elif section.kind == "motor":
        kind = BilinearMotor(**params)
    else:
        kind = Lti(
            a=np.asarray(params["a"], dtype=float),
            b=np.asarray(params["b"], dtype=float),
            c=np.asarray(params["c"], dtype=float),
            d=np.asarray(params["d"], dtype=float),
        )
    return PlantModel(kind=kind, dt=section.dt, substeps=section.substeps)


def _build_excitation(section: PlantSection, seed: int) -> ExcitationSpec:
    spec = dict(section.excitation)
    kind_name = spec.pop("kind", None)
    if kind_name == "uniform":
        kind = UniformRandom(lo=float(spec.pop("lo")), hi=float(spec.pop("hi")))
    elif kind_name == "drifting_gaussian":
        kind = DriftingGaussian(
            mean_start=float(spec.pop("mean_start", -0.5)),
            mean_end=float(spec.pop("mean_end", 0.5)),
            sigma=float(spec.pop("sigma", 1.0)),
        )
    elif kind_name == "prbs":
        kind = Prbs(levels=tuple(float(v) for v in spec.pop("levels")))
    else:
        raise ValueError(f"unknown excitation kind {kind_name!r}")
    if spec:
        raise ValueError(f"unexpected excitation keys {sorted(spec)}")
    return ExcitationSpec(kind=kind, length=section.length, seed=seed)


def _kernels(config: ExperimentConfig):
    return (
        kernel_from_config(config.kernel["k_u"]),
        kernel_from_config(config.kernel["k_y"]),
    )


def _resolve_y_ref(value, n_y: int):
    if isinstance(value, str):
        _, _, y = read_trajectory_table(value)
        return y
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.shape == (1, 1) and n_y != 1:
        arr = np.full((1, n_y), arr[0, 0])
    if arr.shape[1] != n_y:
        raise ValueError(f"y_ref has {arr.shape[1]} columns, data has {n_y} outputs")
    return arr


def cmd_gen_data(config: ExperimentConfig, out_path) -> int:
    plant = _build_plant(config.plant)
    excitation = _build_excitation(config.plant, config.seed)
    x0 = default_x0(plant) if config.plant.x0 is None else np.asarray(config.plant.x0)
    data = generate(plant, x0, excitation, noise_std=config.plant.noise_std)
    if config.plant.y_offset != 0.0 or config.plant.y_scale != 1.0:
        data = type(data)(
            u=data.u,
            y=(data.y - config.plant.y_offset) / config.plant.y_scale,
            dt=data.dt,
        )
    write_trajectory_csv(out_path, data)
    print(f"wrote {data.length} samples (n_u={data.n_u}, n_y={data.n_y}, "
          f"dt={data.dt!r}) to {out_path}")
    return EXIT_OK


def cmd_predict(config: ExperimentConfig, data_path, query_path, out_path) -> int:
    if config.problem.t_past is None or config.problem.t_future is None:
        raise ValueError("problem section needs t_past and t_future for predict")
    t_m, t_p = config.problem.t_past, config.problem.t_future
    data = read_trajectory_csv(data_path)
    t_query, u_query, y_query = read_trajectory_table(query_path)
    if u_query.shape[0] != t_m + t_p:
        raise ValueError(
            f"query must supply {t_m + t_p} rows, got {u_query.shape[0]}"
        )
    if not np.all(np.isfinite(u_query)):
        raise ValueError("query inputs must all be finite")
    if not np.all(np.isfinite(y_query[:t_m])):
        raise ValueError(f"query outputs must be finite over the first {t_m} rows")
    k_u, k_y = _kernels(config)
    gram = build_gram(data, t_m + t_p, k_u, k_y, noise=config.noise)
    problem = PredictionProblem(
        gram=gram, u_init=u_query[:t_m], y_init=y_query[:t_m], u_future=u_query[t_m:]
    )
    tic = time.perf_counter()
    result = predict(problem, config.settings())
    wall = time.perf_counter() - tic

    truth = y_query[t_m:]
    have_truth = bool(np.all(np.isfinite(truth)))
    with open(out_path, "w", newline="") as fh:
        cols = ["t"] + [f"y_pred{i + 1}" for i in range(data.n_y)]
        if have_truth:
            cols += [f"y_true{i + 1}" for i in range(data.n_y)]
        fh.write(",".join(cols) + "\n")
        for i in range(t_p):
            cells = [repr(float(t_query[t_m + i]))]
            cells += [repr(float(v)) for v in result.y_pred[i]]
            if have_truth:
                cells += [repr(float(v)) for v in truth[i]]
            fh.write(",".join(cells) + "\n")
    print(f"residual={result.residual:.6e} iterations={result.report.iterations} "
          f"wall_s={wall:.3f}")
    if have_truth:
        rmse = float(np.sqrt(np.mean((result.y_pred - truth) ** 2)))
        print(f"rmse={rmse:.6e}")
    return EXIT_OK


def cmd_control(config: ExperimentConfig, data_path, out_path) -> int:
    if config.problem.t_context is None or config.problem.horizon is None:
        raise ValueError("problem section needs t_context and horizon for control")
    t_c, horizon = config.problem.t_context, config.problem.horizon
    data = read_trajectory_csv(data_path)
    k_u, k_y = _kernels(config)
    gram = build_gram(data, t_c + horizon, k_u, k_y, noise=config.noise)
    u_box = None
    if config.problem.u_box is not None:
        lo, hi = config.problem.u_box
        u_box = (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    y_box = None
    if config.problem.y_box is not None:
        lo, hi = config.problem.y_box
        y_box = (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    problem = MpcProblem(
        gram=gram,
        t_context=t_c,
        horizon=horizon,
        q=config.problem.q,
        r=config.problem.r,
        y_ref=_resolve_y_ref(config.problem.y_ref, data.n_y),
        u_box=u_box,
        y_box=y_box,
        penalties=config.solver.penalty_schedule,
        settings=config.settings(),
    )
    plant = _build_plant(config.plant)
    x0 = default_x0(plant) if config.plant.x0 is None else np.asarray(config.plant.x0)
    log = run_closed_loop(problem, plant, x0, config.problem.steps,
                          y_offset=config.plant.y_offset,
                          y_scale=config.plant.y_scale)
    write_closed_loop_csv(out_path, log)
    if log.steps:
        tail = max(1, log.steps // 4)
        err = np.abs(log.y - log.y_ref)
        print(f"steps={log.steps} mean_tail_error={float(err[-tail:].mean()):.6e} "
              f"max_error={float(err.max()):.6e} "
              f"mean_solve_ms={float(log.solve_ms.mean()):.1f}")
    else:
        print("steps=0 (header-only log)")
    return EXIT_OK


def cmd_check_pe(config: ExperimentConfig, data_path) -> int:
    data = read_trajectory_csv(data_path)
    if config.problem.t_past is not None and config.problem.t_future is not None:
        depth = config.problem.t_past + config.problem.t_future
    elif config.problem.t_context is not None and config.problem.horizon is not None:
        depth = config.problem.t_context + config.problem.horizon
    else:
        raise ValueError("problem section needs window lengths for check-pe")
    k_u, _ = _kernels(config)
    rank, sv = pe_rank(data, depth, k_u)
    score = pe_trace_score(data, depth, k_u)
    required = depth * data.n_u
    lin_rank, _ = pe_rank(data, depth, linear_kernel())
    tail = ",".join(f"{v:.3e}" for v in sv[max(0, rank - 3): rank + 3])
    print(f"depth={depth} rank={rank} trace_score={score!r}")
    print(f"singular_values_near_cutoff=[{tail}]")
    print(f"linear_kernel_rank={lin_rank} required_for_linear_pe={required}")
    if lin_rank < required:
        print("PE CHECK FAILED: input is not persistently exciting at this depth")
        return EXIT_PE
    print("PE check passed")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdeepc",
        description="kernelized data-enabled prediction and predictive control",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, data=False, query=False, out=False):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        if data:
            p.add_argument("--data", required=True, help="trajectory CSV")
        if query:
            p.add_argument("--query", required=True, help="query CSV")
        if out:
            p.add_argument("--out", required=True, help="output CSV path")
        p.add_argument("--seed", type=int, default=None, help="override io.seed")
        return p

    add("gen-data", "simulate the configured plant and write a trajectory CSV",
        out=True)
    add("predict", "open-loop prediction for a query window", data=True,
        query=True, out=True)
    add("control", "closed-loop receding-horizon run", data=True, out=True)
    add("check-pe", "persistent-excitation diagnostics", data=True)
    return parser


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        config = load_config(args.config, seed_override=args.seed)
        if args.command == "gen-data":
            return cmd_gen_data(config, args.out)
        if args.command == "predict":
            return cmd_predict(config, args.data, args.query, args.out)
        if args.command == "control":
            return cmd_control(config, args.data, args.out)
        return cmd_check_pe(config, args.data)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SolverFailureError, NumericOverflowError, DivergenceError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, TypeError, KeyError, KdeepcError) as exc:
        print(f"config/argument error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
