"""Branching-diffusion Monte Carlo for semilinear parabolic equations."""
from .bounds import (BoundsReport, HorizonError, bounds_report, explosion_horizon, growth_bound,
                     moment_bounds, solve_eta)
from .branching import BranchingLaw, ParticleTree, TreeOverflowError, simulate_forest, simulate_tree
from .driver import (LocalPolynomialDriver, driver_error, eval_driver, fit_local_polynomial,
                     fit_time_sliced, lipschitz_constants)
from .dynamics import Box, Dynamics, simulate_path
from .estimator import McEstimate, evaluate_functional, mc_estimate, plain_monte_carlo, truncate
from .grid import ValueGrid
from .problem import Problem
from .scheme import SchemeConfig, SchemeResult, run_method_a, run_method_b, run_picard, run_scheme
from .solver import BranchingBSDESolver
from .testcases import (BenchmarkProblem, get_benchmark, hard_problem_1, hard_problem_2, pde_residual,
                        toy_problem)

__version__ = "0.1.0"
