import numpy as np
import pytest

from kdeepc.errors import InsufficientDataError
from kdeepc.hankel import (
    TrajectoryData,
    build_gram,
    pe_rank,
    pe_trace_score,
    read_trajectory_csv,
    read_trajectory_table,
    trajectory_kernel,
    window,
    write_trajectory_csv,
)
from kdeepc.kernels import (
    EmpiricalNoise,
    GaussianNoise,
    KernelSpec,
    Rbf,
    evaluate,
    linear_kernel,
    term,
)
from kdeepc.linear_oracle import stacked_hankel


def simple_data(T=6, dt=0.5):
    u = np.arange(1.0, T + 1.0)
    y = np.arange(4.0, T + 4.0)
    return TrajectoryData(u=u, y=y, dt=dt)


def random_data(seed, length=40, n_u=1, n_y=1, dt=0.1, scale=0.7):
    rng = np.random.default_rng(seed)
    return TrajectoryData(
        u=rng.normal(scale=scale, size=(length, n_u)),
        y=rng.normal(scale=scale, size=(length, n_y)),
        dt=dt,
    )


class TestTrajectoryData:
    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="equal length"):
            TrajectoryData(u=np.zeros(3), y=np.zeros(4), dt=0.1)

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError, match="dt"):
            TrajectoryData(u=np.zeros(3), y=np.zeros(3), dt=0.0)

    def test_arrays_read_only(self):
        data = simple_data()
        with pytest.raises(ValueError):
            data.u[0] = 99.0


class TestWindow:
    def test_first_window(self):
        data = TrajectoryData(u=[1.0, 2.0, 3.0], y=[4.0, 5.0, 6.0], dt=1.0)
        u_win, y_win = window(data, 2, 1)
        assert u_win.ravel().tolist() == [1.0, 2.0]
        assert y_win.ravel().tolist() == [4.0, 5.0]

    def test_second_window(self):
        data = TrajectoryData(u=[1.0, 2.0, 3.0], y=[4.0, 5.0, 6.0], dt=1.0)
        u_win, y_win = window(data, 2, 2)
        assert u_win.ravel().tolist() == [2.0, 3.0]
        assert y_win.ravel().tolist() == [5.0, 6.0]

    def test_full_depth_single_column(self):
        data = simple_data(T=5)
        u_win, y_win = window(data, 5, 1)
        assert u_win.shape[0] == 5
        with pytest.raises(ValueError, match="out of range"):
            window(data, 5, 2)

    def test_overlap_shift_property(self):
        data = random_data(0, length=30)
        depth = 7
        for j in range(1, data.length - depth + 1):
            u_a, y_a = window(data, depth, j)
            u_b, y_b = window(data, depth, j + 1)
            assert np.array_equal(u_a[1:], u_b[:-1])
            assert np.array_equal(y_a[1:], y_b[:-1])


class TestTrajectoryKernel:
    def test_depth_one_linear(self):
        k = linear_kernel()
        win_a = (np.array([[1.0, 2.0]]), np.array([[0.5]]))
        win_b = (np.array([[3.0, -1.0]]), np.array([[2.0]]))
        assert trajectory_kernel(k, k, win_a, win_b) == pytest.approx(1.0 + 1.0)

    def test_self_window_rbf_is_twice_depth(self):
        spec = KernelSpec((term(1.0, Rbf(3.7)),))
        rng = np.random.default_rng(1)
        win = (rng.normal(size=(5, 2)), rng.normal(size=(5, 1)))
        assert trajectory_kernel(spec, spec, win, win) == pytest.approx(10.0)

    def test_matches_direct_summation(self, pendulum_kernels):
        k_u, k_y = pendulum_kernels
        rng = np.random.default_rng(2)
        win_a = (rng.normal(scale=0.5, size=(3, 1)), rng.normal(scale=0.5, size=(3, 1)))
        win_b = (rng.normal(scale=0.5, size=(3, 1)), rng.normal(scale=0.5, size=(3, 1)))
        direct = sum(
            evaluate(k_u, win_a[0][k], win_b[0][k]) for k in range(3)
        ) + sum(evaluate(k_y, win_a[1][k], win_b[1][k]) for k in range(3))
        assert trajectory_kernel(k_u, k_y, win_a, win_b) == pytest.approx(
            direct, rel=1e-13
        )


class TestBuildGram:
    def test_single_column_at_full_depth(self, pendulum_kernels):
        k_u, k_y = pendulum_kernels
        data = random_data(3, length=8)
        gram = build_gram(data, 8, k_u, k_y)
        assert gram.gram.shape == (1, 1)
        u_win, y_win = window(data, 8, 1)
        expected = trajectory_kernel(k_u, k_y, (u_win, y_win), (u_win, y_win))
        assert gram.gram[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_linear_kernels_equal_hankel_gram(self):
        data = random_data(4, length=50, n_u=2, n_y=1)
        gram = build_gram(data, 6, linear_kernel(), linear_kernel())
        h = stacked_hankel(data, 6)
        diff = np.abs(gram.gram - h.T @ h).max()
        assert diff <= 1e-10 * np.abs(gram.gram).max()

    def test_exact_symmetry_and_psd(self, motor_kernels):
        k_u, k_y = motor_kernels
        data = random_data(5, length=45)
        gram = build_gram(data, 9, k_u, k_y)
        assert np.array_equal(gram.gram, gram.gram.T)
        eig = np.linalg.eigvalsh(gram.gram)
        assert eig.min() >= -1e-8 * eig.max()

    def test_insufficient_data(self, pendulum_kernels):
        k_u, k_y = pendulum_kernels
        with pytest.raises(InsufficientDataError):
            build_gram(random_data(6, length=5), 6, k_u, k_y)

    def test_matches_trajectory_kernel_entries(self, motor_kernels):
        k_u, k_y = motor_kernels
        data = random_data(7, length=12)
        depth = 4
        gram = build_gram(data, depth, k_u, k_y)
        for i in (1, 3):
            for j in (2, 9):
                expected = trajectory_kernel(
                    k_u, k_y, window(data, depth, i), window(data, depth, j)
                )
                assert gram.gram[i - 1, j - 1] == pytest.approx(expected, rel=1e-12)

    def test_gaussian_noise_gram_matches_scalar_path(self):
        spec = KernelSpec((term(1.0, Rbf(5.0)),))
        data = random_data(8, length=10)
        noise = GaussianNoise(0.3)
        gram = build_gram(data, 3, spec, spec, noise=noise)
        i, j = 2, 5
        expected = trajectory_kernel(
            spec, spec, window(data, 3, i), window(data, 3, j), noise=noise
        )
        assert gram.gram[i - 1, j - 1] == pytest.approx(expected, rel=1e-12)

    def test_paper_scale_pendulum_gram_shape(self, pendulum_kernels):
        from kdeepc.plants import ExcitationSpec, Pendulum, PlantModel, UniformRandom, generate

        k_u, k_y = pendulum_kernels
        plant = PlantModel(kind=Pendulum(), dt=0.04, substeps=10)
        data = generate(plant, np.zeros(2),
                        ExcitationSpec(UniformRandom(-1.0, 1.0), 500, seed=0))
        gram = build_gram(data, 70, k_u, k_y)
        assert gram.gram.shape == (431, 431)
        assert np.array_equal(gram.gram, gram.gram.T)
        eig = np.linalg.eigvalsh(gram.gram)
        assert eig.min() >= -1e-8 * eig.max()

    def test_empirical_noise_gram_matches_scalar_path(self):
        spec = KernelSpec((term(1.0, Rbf(5.0)),))
        data = random_data(9, length=9)
        noise = EmpiricalNoise(((0.2,), (-0.1,), (0.05,)))
        gram = build_gram(data, 3, spec, spec, noise=noise)
        i, j = 1, 4
        expected = trajectory_kernel(
            spec, spec, window(data, 3, i), window(data, 3, j), noise=noise
        )
        assert gram.gram[i - 1, j - 1] == pytest.approx(expected, rel=1e-12)
        assert np.array_equal(gram.gram, gram.gram.T)


class TestPeDiagnostics:
    def test_constant_input_rank_one(self):
        data = TrajectoryData(u=np.full(30, 2.5), y=np.zeros(30), dt=1.0)
        rank, _ = pe_rank(data, 4, linear_kernel())
        assert rank == 1

    def test_iid_input_full_rank(self):
        rng = np.random.default_rng(10)
        data = TrajectoryData(
            u=rng.uniform(-1, 1, size=100), y=np.zeros(100), dt=1.0
        )
        rank, sv = pe_rank(data, 5, linear_kernel())
        assert rank == 5
        assert np.all(np.diff(sv) <= 1e-12)

    def test_zero_input_rank_zero(self):
        data = TrajectoryData(u=np.zeros(20), y=np.zeros(20), dt=1.0)
        rank, _ = pe_rank(data, 3, linear_kernel())
        assert rank == 0

    def test_rank_matches_numeric_hankel(self):
        rng = np.random.default_rng(11)
        data = TrajectoryData(
            u=rng.standard_normal((60, 2)), y=np.zeros((60, 1)), dt=1.0
        )
        from kdeepc.linear_oracle import hankel_matrix

        rank, _ = pe_rank(data, 4, linear_kernel())
        assert rank == np.linalg.matrix_rank(hankel_matrix(data.u, 4))

    def test_rank_nondecreasing_in_data(self):
        rng = np.random.default_rng(12)
        u = rng.standard_normal(40)
        previous = 0
        for length in range(6, 41):
            data = TrajectoryData(u=u[:length], y=np.zeros(length), dt=1.0)
            rank, _ = pe_rank(data, 6, linear_kernel())
            assert rank >= previous
            previous = rank

    def test_trace_score_rbf_is_one(self):
        data = random_data(13, length=25)
        spec = KernelSpec((term(1.0, Rbf(2.0)),))
        assert pe_trace_score(data, 5, spec) == pytest.approx(1.0, rel=1e-13)

    def test_trace_score_zero_input(self):
        data = TrajectoryData(u=np.zeros(15), y=np.zeros(15), dt=1.0)
        assert pe_trace_score(data, 3, linear_kernel()) == 0.0

    def test_trace_score_linear_direct_sum(self):
        data = random_data(14, length=20)
        depth = 4
        score = pe_trace_score(data, depth, linear_kernel())
        n = data.length - depth + 1
        direct = sum(
            float(data.u[i : i + depth].ravel() @ data.u[i : i + depth].ravel())
            for i in range(n)
        ) / (depth * n)
        assert score == pytest.approx(direct, rel=1e-13)


class TestCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        data = random_data(15, length=12, n_u=2, n_y=1, dt=0.04)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(path, data)
        back = read_trajectory_csv(path)
        assert np.array_equal(back.u, data.u)
        assert np.array_equal(back.y, data.y)
        assert back.dt == data.dt
        write_trajectory_csv(tmp_path / "again.csv", back)
        assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()

    def test_header_format(self, tmp_path):
        data = random_data(16, length=3, n_u=2, n_y=3)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(path, data)
        header = path.read_text().splitlines()[0]
        assert header == "t,u1,u2,y1,y2,y3"

    def test_missing_outputs_parse_as_nan(self, tmp_path):
        path = tmp_path / "query.csv"
        path.write_text("t,u1,y1\n0.0,1.0,2.0\n0.1,0.5,\n")
        t, u, y = read_trajectory_table(path)
        assert np.isnan(y[1, 0]) and y[0, 0] == 2.0
        assert u.ravel().tolist() == [1.0, 0.5]

    def test_malformed_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,u1,y1\n0,1,2\n")
        with pytest.raises(ValueError, match="header"):
            read_trajectory_table(path)

    def test_nonuniform_time_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,u1,y1\n0.0,1.0,2.0\n0.1,1.0,2.0\n0.3,1.0,2.0\n")
        with pytest.raises(ValueError, match="uniform"):
            read_trajectory_csv(path)
