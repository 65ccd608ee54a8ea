import numpy as np
import pytest

from kdeepc import _accel
from kdeepc.kernels import Exponential, KernelSpec, Polynomial, Rbf, term


@pytest.fixture(scope="session", autouse=True)
def _warm_backend():
    # trigger JIT compilation once, outside any timed region
    _accel.warmup()


@pytest.fixture(scope="session")
def pendulum_kernels():
    k_u = KernelSpec(
        (
            term(0.2, Rbf(6.0)),
            term(1.0, Exponential()),
            term(0.01, Rbf(6.0), Exponential()),
        )
    )
    k_y = KernelSpec(
        (
            term(0.2, Rbf(6.0)),
            term(1.0, Exponential()),
            term(0.01, Rbf(6.0), Exponential()),
            term(1.0, Polynomial(2, 1.0)),
        )
    )
    return k_u, k_y


@pytest.fixture(scope="session")
def motor_kernels():
    spec = KernelSpec((term(0.1, Rbf(4.0)), term(1.0, Rbf(4.0), Exponential())))
    return spec, spec


def make_lti_dataset(n_x, seed, length=200, dt=0.1):
    """Shared fixture helper: controllable LTI + PE data + the system."""
    from kdeepc.hankel import TrajectoryData
    from kdeepc.linear_oracle import random_controllable, simulate

    system = random_controllable(n_x, 1, 1, seed=seed, radius=0.8)
    rng = np.random.default_rng([seed, 17])
    u = rng.standard_normal((length, 1))
    y = simulate(system, np.zeros(n_x), u)
    return system, TrajectoryData(u=u, y=y, dt=dt)
