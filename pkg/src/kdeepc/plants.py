"""Ground-truth plants and excitation-signal generators.

Continuous plants are integrated with classical fourth-order Runge-Kutta
using a fixed number of substeps per sampling interval; the discrete LTI
kind applies its state map exactly.  Outputs are measured at the sample
instant the input is applied: a trajectory pairs (u_i, y_i) where
y_i = h(x_i) and u_i acts from that instant on, so u_i influences y_{i+1}
onward for the strictly causal plants here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DivergenceError
from .hankel import TrajectoryData


@dataclass(frozen=True)
class Pendulum:
    """Force-driven damped pendulum; the measured output is the angle."""

    gravity: float = 9.8
    length: float = 0.5
    damping: float = 0.1


@dataclass(frozen=True)
class BilinearMotor:
    """DC motor with a bilinear speed/current coupling; output is the speed."""

    inductance: float = 0.314
    resistance: float = 12.345
    torque_constant: float = 0.253
    inertia: float = 0.00441
    friction: float = 0.00732
    load_torque: float = 1.47
    supply_voltage: float = 60.0


@dataclass(frozen=True, eq=False)
class Lti:
    """Discrete-time linear state-space map (applied exactly, no integration)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        c = np.atleast_2d(np.asarray(self.c, dtype=float))
        d = np.atleast_2d(np.asarray(self.d, dtype=float))
        n_x = a.shape[0]
        if a.shape != (n_x, n_x):
            raise ValueError("A must be square")
        if b.shape[0] != n_x or c.shape[1] != n_x:
            raise ValueError("B/C dimensions do not match A")
        if d.shape != (c.shape[0], b.shape[1]):
            raise ValueError("D dimensions do not match B and C")
        for name, arr in (("a", a), ("b", b), ("c", c), ("d", d)):
            object.__setattr__(self, name, arr)


PlantKind = Union[Pendulum, BilinearMotor, Lti]


@dataclass(frozen=True, eq=False)
class PlantModel:
    kind: PlantKind
    dt: float
    substeps: int = 10

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be finite and > 0, got {self.dt}")
        if int(self.substeps) < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "substeps", int(self.substeps))

    @property
    def n_u(self) -> int:
        return self.kind.b.shape[1] if isinstance(self.kind, Lti) else 1

    @property
    def n_y(self) -> int:
        return self.kind.c.shape[0] if isinstance(self.kind, Lti) else 1

    @property
    def n_x(self) -> int:
        if isinstance(self.kind, Lti):
            return self.kind.a.shape[0]
        return 2


def _ode(kind: PlantKind, x: np.ndarray, u: float) -> np.ndarray:
    if isinstance(kind, Pendulum):
        angle, rate = x
        acc = (
            -(2.0 * kind.gravity / kind.length) * math.sin(angle)
            - kind.damping * rate ** 3
            + abs(math.cos(angle)) * u / kind.length
        )
        return np.array([rate, acc])
    current, speed = x
    k = kind
    d_current = (
        -(k.resistance / k.inductance) * current
        + (k.torque_constant / k.inductance) * speed * u
        + k.supply_voltage / k.inductance
    )
    d_speed = (
        -(k.friction / k.inertia) * speed
        + (k.torque_constant / k.inertia) * current * u
        - k.load_torque / k.inertia
    )
    return np.array([d_current, d_speed])


def output(plant: PlantModel, x, u) -> np.ndarray:
    """Measured output at the current state (with feedthrough for Lti)."""
    x = np.asarray(x, dtype=float)
    if isinstance(plant.kind, Lti):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return plant.kind.c @ x + plant.kind.d @ u
    if isinstance(plant.kind, Pendulum):
        return x[0:1].copy()
    return x[1:2].copy()


def step(plant: PlantModel, x, u, dt=None):
    """Advance one sampling interval under a zero-order-hold input.

    Returns (x_next, y) where y is the output measured at the current
    state.  Raises DivergenceError when the next state is non-finite.
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("state and input must be finite")
    y = output(plant, x, u)
    # overflow here is the divergence the check below reports; keep it quiet
    with np.errstate(over="ignore", invalid="ignore"):
        if isinstance(plant.kind, Lti):
            x_next = plant.kind.a @ x + plant.kind.b @ u
        else:
            dt = plant.dt if dt is None else float(dt)
            h = dt / plant.substeps
            uu = float(u[0])
            x_next = x
            for _ in range(plant.substeps):
                k1 = _ode(plant.kind, x_next, uu)
                k2 = _ode(plant.kind, x_next + 0.5 * h * k1, uu)
                k3 = _ode(plant.kind, x_next + 0.5 * h * k2, uu)
                k4 = _ode(plant.kind, x_next + h * k3, uu)
                x_next = x_next + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError("plant state diverged during integration")
    return x_next, y


def default_x0(plant: PlantModel) -> np.ndarray:
    """Pendulum: rest.  Motor: the algebraic equilibrium under zero input.
    Lti: the origin."""
    if isinstance(plant.kind, Pendulum):
        return np.zeros(2)
    if isinstance(plant.kind, BilinearMotor):
        return motor_equilibrium(plant.kind, 0.0)
    return np.zeros(plant.n_x)


def motor_equilibrium(kind: BilinearMotor, u: float) -> np.ndarray:
    """Fixed point of the bilinear motor ODE at a constant input."""
    u = float(u)
    mat = np.array(
        [
            [-kind.resistance, kind.torque_constant * u],
            [kind.torque_constant * u, -kind.friction],
        ]
    )
    rhs = np.array([-kind.supply_voltage, kind.load_torque])
    return np.linalg.solve(mat, rhs)


# --- excitation signals ----------------------------------------------------


@dataclass(frozen=True)
class UniformRandom:
    """I.i.d. uniform samples on [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class DriftingGaussian:
    """Gaussian samples whose mean drifts linearly across the record."""

    mean_start: float = -0.5
    mean_end: float = 0.5
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class Prbs:
    """I.i.d. switching over a fixed set of levels."""

    levels: tuple

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if len(levels) < 1:
            raise ValueError("prbs needs at least one level")
        object.__setattr__(self, "levels", levels)


ExcitationKind = Union[UniformRandom, DriftingGaussian, Prbs]


@dataclass(frozen=True)
class ExcitationSpec:
    kind: ExcitationKind
    length: int
    seed: int = 0

    def __post_init__(self):
        if int(self.length) < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")
        object.__setattr__(self, "length", int(self.length))
        object.__setattr__(self, "seed", int(self.seed))


def excitation_signal(spec: ExcitationSpec, n_u: int = 1) -> np.ndarray:
    """Deterministic (length, n_u) input record for the given seed."""
    rng = np.random.default_rng([spec.seed, 0])
    shape = (spec.length, int(n_u))
    kind = spec.kind
    if isinstance(kind, UniformRandom):
        return rng.uniform(kind.lo, kind.hi, size=shape)
    if isinstance(kind, DriftingGaussian):
        if spec.length == 1:
            means = np.array([kind.mean_start])
        else:
            means = np.linspace(kind.mean_start, kind.mean_end, spec.length)
        return means[:, None] + kind.sigma * rng.standard_normal(shape)
    if isinstance(kind, Prbs):
        levels = np.asarray(kind.levels)
        return levels[rng.integers(0, len(levels), size=shape)]
    raise TypeError(f"unknown excitation kind {kind!r}")


def generate(plant: PlantModel, x0, excitation: ExcitationSpec,
             noise_std: float = 0.0) -> TrajectoryData:
    """Simulate the plant under the excitation signal.

    Optional additive Gaussian measurement noise (std noise_std) is applied
    to the recorded outputs; it draws from a stream independent of the
    excitation so toggling it does not change the input record.
    """
    u = excitation_signal(excitation, plant.n_u)
    x = np.asarray(x0, dtype=float)
    if x.shape != (plant.n_x,):
        raise ValueError(f"x0 must have shape ({plant.n_x},), got {x.shape}")
    ys = np.empty((excitation.length, plant.n_y))
    for i in range(excitation.length):
        try:
            x, ys[i] = step(plant, x, u[i])
        except DivergenceError as exc:
            raise DivergenceError(str(exc), step=i) from None
    if noise_std:
        rng = np.random.default_rng([excitation.seed, 2])
        ys = ys + noise_std * rng.standard_normal(ys.shape)
    return TrajectoryData(u=u, y=ys, dt=plant.dt)
