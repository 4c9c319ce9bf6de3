"""Desk-scale laboratory for adaptive-optimizer SDE approximations and scaling rules."""

from .problems import (
    ConstantCovariance,
    EmpiricalCovariance,
    IsotropicCovariance,
    LeastSquaresProblem,
    LinearProblem,
    QuadraticProblem,
    exact_covariance,
)
from .ngos import (
    BernoulliNoiseOracle,
    GaussianOracle,
    MinibatchOracle,
    SvagOracle,
    apply_svag_operator,
    estimate_noise_moments,
    noise_dominance_ratio,
    sample_gradient,
    svag_coefficients,
)
from .optimizers import (
    HyperParams,
    OptimizerState,
    adam_step,
    rmsprop_step,
    run_discrete,
    sgd_step,
    svag_transform_hparams,
)
from .recording import NonFiniteError, TestFunctionSet, TrajectoryRecord
from .sde import (
    SdeState,
    SdeSystem,
    build_adam_sde,
    build_auxiliary_sde,
    build_rmsprop_sde,
    build_sgd_sde,
    clamp_mu,
    euler_maruyama,
    psd_sqrt,
    transition_tau,
)

__version__ = "0.1.0"
