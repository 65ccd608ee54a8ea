import numpy as np
import pytest

from conftest import make_lti_dataset
from kdeepc.controller import (
    MpcProblem,
    run_closed_loop,
    solve_step,
    write_closed_loop_csv,
)
from kdeepc.hankel import build_gram, window
from kdeepc.kernels import linear_kernel
from kdeepc.linear_oracle import deepc_control, simulate
from kdeepc.plants import Lti, PlantModel
from kdeepc.predictor import SolverSettings


def lti_mpc_setup(seed=0, t_c=4, horizon=8, length=250, y_ref=0.5, u_box=None,
                  r=0.01):
    system, data = make_lti_dataset(2, seed=seed, length=length)
    gram = build_gram(data, t_c + horizon, linear_kernel(), linear_kernel())
    problem = MpcProblem(
        gram=gram, t_context=t_c, horizon=horizon, q=1.0, r=r,
        y_ref=np.atleast_2d(y_ref), u_box=u_box,
        settings=SolverSettings(seed=0),
    )
    return system, data, problem


class TestSolveStep:
    def test_training_window_reference_is_reproduced(self, motor_kernels):
        # when the reference equals a training window's output tail and the
        # context matches that window, a zero-residual reference-matching
        # candidate exists in the data; the returned cost cannot beat it by
        # more than the stage input cost allows, nor exceed it
        _, data, _ = lti_mpc_setup(seed=1)
        k_u, k_y = motor_kernels
        t_c, horizon = 4, 8
        gram = build_gram(data, t_c + horizon, k_u, k_y)
        j = 31
        u_w, y_w = window(data, gram.depth, j)
        problem = MpcProblem(
            gram=gram, t_context=t_c, horizon=horizon, q=1.0, r=0.01,
            y_ref=y_w[t_c:], u_box=(-10.0, 10.0),
            settings=SolverSettings(seed=0),
        )
        result = solve_step(problem, u_w[:t_c], y_w[:t_c])
        window_cost = 0.01 * float((u_w[t_c:] ** 2).sum())
        assert result.cost <= window_cost + 1e-6
        assert result.certified  # lower-level residual within tolerance

    def test_matches_convex_oracle_linear_kernels(self):
        system, data, problem = lti_mpc_setup(seed=2, r=0.05)
        t_c = problem.t_context
        rng = np.random.default_rng(3)
        u_ini = 0.3 * rng.standard_normal((t_c, 1))
        y_ini = simulate(system, 0.2 * rng.standard_normal(2), u_ini)
        result = solve_step(problem, u_ini, y_ini)
        u_oracle, y_oracle = deepc_control(
            data, t_c, problem.horizon, q=1.0, r=0.05, y_ref=0.5,
            u_init=u_ini, y_init=y_ini,
        )
        assert np.abs(result.u_plan - u_oracle).max() <= 1e-3
        assert np.abs(result.y_plan - y_oracle).max() <= 1e-3

    def test_penalty_stage_residuals_nonincreasing(self):
        system, data, problem = lti_mpc_setup(seed=4)
        t_c = problem.t_context
        rng = np.random.default_rng(5)
        u_ini = 0.3 * rng.standard_normal((t_c, 1))
        y_ini = simulate(system, 0.1 * rng.standard_normal(2), u_ini)
        result = solve_step(problem, u_ini, y_ini)
        residuals = [stage.residual for stage in result.stages]
        for earlier, later in zip(residuals, residuals[1:]):
            assert later <= earlier + 1e-9

    def test_box_constraints_exactly_satisfied(self):
        system, data, problem = lti_mpc_setup(
            seed=6, y_ref=3.0, u_box=(-0.2, 0.2)
        )
        t_c = problem.t_context
        u_ini = np.zeros((t_c, 1))
        y_ini = simulate(system, np.zeros(2), u_ini)
        result = solve_step(problem, u_ini, y_ini)
        assert result.u_plan.min() >= -0.2
        assert result.u_plan.max() <= 0.2
        # an aggressive reference saturates at least one input
        assert np.abs(result.u_plan).max() == pytest.approx(0.2)

    def test_context_validation(self):
        _, _, problem = lti_mpc_setup(seed=7)
        with pytest.raises(ValueError, match="context"):
            solve_step(problem, np.zeros((3, 1)), np.zeros((4, 1)))


class TestRunClosedLoop:
    def test_zero_steps_empty_log(self):
        system, data, problem = lti_mpc_setup(seed=8)
        plant = PlantModel(kind=Lti(system.a, system.b, system.c, system.d), dt=0.1)
        log = run_closed_loop(problem, plant, np.zeros(2), 0)
        assert log.steps == 0
        assert log.t.shape == (0,)

    def test_lti_tracking_converges(self):
        system, data, problem = lti_mpc_setup(seed=9, y_ref=0.4, r=1e-6,
                                              horizon=10, length=300)
        plant = PlantModel(kind=Lti(system.a, system.b, system.c, system.d), dt=0.1)
        log = run_closed_loop(problem, plant, np.zeros(2), 30)
        tail = np.abs(log.y[-8:] - 0.4)
        assert tail.max() <= 1e-3

    def test_applied_inputs_stay_in_box(self):
        system, data, problem = lti_mpc_setup(seed=10, y_ref=2.0,
                                              u_box=(-0.3, 0.3))
        plant = PlantModel(kind=Lti(system.a, system.b, system.c, system.d), dt=0.1)
        log = run_closed_loop(problem, plant, np.zeros(2), 10)
        assert log.u.min() >= -0.3 and log.u.max() <= 0.3

    def test_log_csv_round_trip(self, tmp_path):
        system, data, problem = lti_mpc_setup(seed=11)
        plant = PlantModel(kind=Lti(system.a, system.b, system.c, system.d), dt=0.1)
        log = run_closed_loop(problem, plant, np.zeros(2), 3)
        path = tmp_path / "loop.csv"
        write_closed_loop_csv(path, log)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,t,u1,y1,yref1,residual,solve_ms"
        assert len(lines) == 4

    def test_zero_steps_header_only_csv(self, tmp_path):
        system, data, problem = lti_mpc_setup(seed=12)
        plant = PlantModel(kind=Lti(system.a, system.b, system.c, system.d), dt=0.1)
        log = run_closed_loop(problem, plant, np.zeros(2), 0)
        path = tmp_path / "empty.csv"
        write_closed_loop_csv(path, log)
        assert path.read_text().splitlines() == ["step,t,u1,y1,yref1,residual,solve_ms"]


class TestDivergence:
    def test_unstable_plant_raises_with_step_index(self):
        from kdeepc.errors import DivergenceError

        system, data, problem = lti_mpc_setup(seed=16)
        unstable = Lti(a=[[4.0, 0.0], [0.0, 4.0]], b=[[1.0], [1.0]],
                       c=[[1.0, 0.0]], d=[[0.0]])
        plant = PlantModel(kind=unstable, dt=0.1)
        with pytest.raises(DivergenceError) as info:
            run_closed_loop(problem, plant, np.full(2, 1e307), 5)
        assert info.value.step is not None


class TestMpcProblemValidation:
    def test_depth_mismatch(self):
        _, data, problem = lti_mpc_setup(seed=13)
        with pytest.raises(ValueError, match="depth"):
            MpcProblem(
                gram=problem.gram, t_context=3, horizon=8, q=1.0, r=1.0,
                y_ref=np.zeros((1, 1)),
            )

    def test_penalties_must_increase(self):
        _, data, problem = lti_mpc_setup(seed=14)
        with pytest.raises(ValueError, match="increasing"):
            MpcProblem(
                gram=problem.gram, t_context=4, horizon=8, q=1.0, r=1.0,
                y_ref=np.zeros((1, 1)), penalties=(1e3, 1e2),
            )

    def test_weight_matrix_psd_check(self):
        _, data, problem = lti_mpc_setup(seed=15)
        with pytest.raises(ValueError, match="positive semidefinite"):
            MpcProblem(
                gram=problem.gram, t_context=4, horizon=8, q=-1.0, r=1.0,
                y_ref=np.zeros((1, 1)),
            )
