"""Kernelized data-enabled prediction and predictive control.

Characterizes nonlinear system trajectories through the Gram matrix of
windowed kernel evaluations over recorded input/output data, and uses that
characterization for open-loop prediction and receding-horizon control
without a parametric model.
"""
from ._accel import active_backend
from .controller import (
    ClosedLoopLog,
    MpcProblem,
    MpcStepResult,
    run_closed_loop,
    solve_step,
    write_closed_loop_csv,
)
from .hankel import (
    GramProblem,
    TrajectoryData,
    build_gram,
    pe_rank,
    pe_trace_score,
    read_trajectory_csv,
    trajectory_kernel,
    window,
    write_trajectory_csv,
)
from .kernels import (
    EmpiricalNoise,
    Exponential,
    GaussianNoise,
    KernelSpec,
    Linear,
    Polynomial,
    Rbf,
    empirical_from_gaussian,
    evaluate,
    grad_y,
    kernel_from_config,
    kernel_to_config,
    linear_kernel,
    mean_embed,
    rbf_kernel,
    term,
)
from .linear_oracle import (
    LtiSystem,
    deepc_control,
    deepc_predict,
    random_controllable,
    simulate,
    stacked_hankel,
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
    motor_equilibrium,
    step,
)
from .predictor import (
    PredictionProblem,
    PredictionResult,
    SolverSettings,
    predict,
    residual,
    residual_grad,
)

__version__ = "0.1.0"
