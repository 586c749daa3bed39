"""Weighted multilevel Richardson-Romberg estimation of diffusion invariant measures.

The estimator combines one long decreasing-step Euler trajectory with a
stack of coupled coarse/fine correcting trajectories, weighted so that the
first R discretization-bias terms cancel.  Submodules:

- ``schedule``   polynomial step sequences and their partial power sums
- ``models``     built-in SDE models (Ornstein-Uhlenbeck, double-well, EWA)
- ``simulate``   Euler schemes, coupled levels, the assembled estimator
- ``weights``    bias-cancellation weight systems
- ``optimizer``  parameter pipeline (depth, step constant, budget split)
- ``harness``    CLI-facing replication studies, tables, CSV output
"""

from .schedule import StepSchedule, PowerSums, power_sums, refined_schedule
from .models import DiffusionModel, TestFunction, ReferenceData, make_ou, make_double_well, make_ewa, gibbs_quadrature
from .simulate import (
    GaussianStream,
    EmpiricalAccumulator,
    BlowUpError,
    euler_step,
    update_empirical,
    run_coarse_level,
    run_correcting_level,
    ml2rgodic_estimate,
)
from .weights import WeightSet, solve_uniform, solve_general, solve_oracle, system_residual, psi, psi_bold, bias1_coefficients
from .optimizer import (
    CalibrationReport,
    EstimatorPlan,
    solve_depth,
    optimal_gamma1,
    solve_rho,
    coarse_size,
    complexity,
    build_plan,
    predicted_mse,
    calibrate_sigma1,
    calibrate_sigma22,
    crude_gamma1,
    crude_complexity,
)

__all__ = [
    "StepSchedule", "PowerSums", "power_sums", "refined_schedule",
    "DiffusionModel", "TestFunction", "ReferenceData",
    "make_ou", "make_double_well", "make_ewa", "gibbs_quadrature",
    "GaussianStream", "EmpiricalAccumulator", "BlowUpError",
    "euler_step", "update_empirical", "run_coarse_level", "run_correcting_level", "ml2rgodic_estimate",
    "WeightSet", "solve_uniform", "solve_general", "solve_oracle",
    "system_residual", "psi", "psi_bold", "bias1_coefficients",
    "CalibrationReport", "EstimatorPlan", "solve_depth", "optimal_gamma1",
    "solve_rho", "coarse_size", "complexity", "build_plan", "predicted_mse",
    "calibrate_sigma1", "calibrate_sigma22", "crude_gamma1", "crude_complexity",
]
