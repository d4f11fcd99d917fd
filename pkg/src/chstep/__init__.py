"""Explicit LIM and exponential EE2 time stepping for the 2D Cahn-Hilliard equation."""

from .diag import DiagnosticSeries, discrete_energy, mass_deviation, relative_error
from .driver import (
    RunResult,
    SolverConfig,
    SolverFailure,
    StepRecord,
    reference_solve,
    run,
    run_adaptive_ee2,
    run_adaptive_lim,
    run_constant,
)
from .grid import GridSpec, LaplacianOperator, build_laplacian
from .krylov import KrylovStepFailure, ee2_constant_step, ee2_krylov_step, phi_dense
from .lim import LIMBlowUp, build_schedule, chebyshev_order, lim_step
from .problem import CahnHilliardProblem, LinearizedSystem, epsilon_m

__version__ = "0.1.0"

__all__ = [
    "CahnHilliardProblem", "DiagnosticSeries", "GridSpec", "KrylovStepFailure", "LIMBlowUp",
    "LaplacianOperator", "LinearizedSystem", "RunResult", "SolverConfig", "SolverFailure", "StepRecord",
    "build_laplacian", "build_schedule", "chebyshev_order", "discrete_energy", "ee2_constant_step",
    "ee2_krylov_step", "epsilon_m", "lim_step", "mass_deviation", "phi_dense", "reference_solve",
    "relative_error", "run", "run_adaptive_ee2", "run_adaptive_lim", "run_constant",
]
