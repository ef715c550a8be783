"""Stochastic approximation for expectation-constrained problems.

Each iteration solves a strongly convex direction subproblem whose linearized
constraints are relaxed so that it is always feasible, estimates its solution
without bias by randomized multilevel Monte Carlo, and takes a diminishing step.
"""
from .ghost import ConfigError, DirectionSolution, GhostConfig, compute_kappa, solve_direction
from .kernel import QpSpec, QpSolution, solve_minmax, solve_qp
from .mlmc import EstimatorDraw, EstimatorFailure, estimate_direction, estimator_moments
from .problem import InvalidArgument, SampleBatch, StochasticProblem, SubproblemData, sample_batch

__all__ = [
    "ConfigError", "DirectionSolution", "EstimatorDraw", "EstimatorFailure", "GhostConfig",
    "InvalidArgument", "QpSolution", "QpSpec", "SampleBatch", "StochasticProblem", "SubproblemData",
    "compute_kappa", "estimate_direction", "estimator_moments", "sample_batch", "solve_direction",
    "solve_minmax", "solve_qp",
]
