"""Projected tug-of-war scheme for the regularized p-Laplacian."""
from ._accel import BACKEND
from .dpp import (ComparisonReport, ConvergenceError, SchemeError, SchemeParams, SolveResult, ValueField,
                  apply_T, check_comparison, coefficients, solve_fixed_point, tilted_inf, tilted_sup)
from .game import (GameState, MCEstimate, ProjectedGame, Strategy, StrategyError, Trajectory, block_length,
                   estimate_value, exit_time_stats, run_trajectory)
from .geometry import DomainShape, GridDomain, GridError, ball_stencil, build_grid
from .kernel import KernelWeights, derive_seed, quadrature_weights, rho, sample_noise
from .verify import (Oracle, constants_crosscheck, eps_sweep, lifted_dpp_residual, pde_residual)

__version__ = "0.1.0"
