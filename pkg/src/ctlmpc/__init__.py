"""Sampled-data linear-quadratic MPC for delayed transfer-function models.

The package turns a MIMO transfer-function model with input delays into a
receding-horizon controller whose quadratic program is the exact
discrete-time equivalent of a continuous-time quadratic objective, plus the
stationary Kalman filter, dense QP solver and multi-rate closed-loop
simulator needed to run and evaluate it.
"""

from .transfer import (
    RationalTransfer,
    TransferMatrix,
    ValidationReport,
    Violation,
    evaluate,
    validate,
)
from .realization import DelayedSisoSS, NsRealization, realize_ns, realize_siso
from .discretization import (
    DiscreteCost,
    DiscreteSystem,
    Weights,
    build_discrete_cost,
    delay_split,
    discretize_model,
    discretize_tracking_cost,
    expm,
    process_noise_cov,
    rho,
    stack_deterministic,
    tracking_cost_with_delays,
    zoh_discretize,
)

__version__ = "0.1.0"
