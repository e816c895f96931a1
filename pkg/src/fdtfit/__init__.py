"""Parameter estimation for ergodic SDEs from fluctuation-dissipation response statistics.

The workflow is: simulate or load equilibrium trajectories
(:mod:`fdtfit.simulate`), estimate linear response operators and their
derivatives (:mod:`fdtfit.response`), approximate them by rational
kernels (:mod:`fdtfit.rational`) and invert the matching conditions for
the model parameters (:mod:`fdtfit.estimate`, :mod:`fdtfit.pipeline`).
scikit-learn style wrappers live in :mod:`fdtfit.estimators`.
"""

from .estimate import (
    EstimationReport,
    LangevinSolveConfig,
    scale_equilibrium,
    solve_langevin,
    solve_linear,
    solve_triad,
)
from .estimators import (
    LangevinEstimator,
    LinearSDEEstimator,
    RationalResponseRegressor,
    TriadEstimator,
)
from .models import LangevinModel, LinearModel, Observable, TriadModel
from .pipeline import estimate_langevin, estimate_linear, estimate_triad
from .rational import RationalApproximant, least_squares_fit, pade_match_at_zero
from .response import ResponseCurve, estimate_response, finite_difference_derivatives
from .simulate import SimConfig, Trajectory, ensemble, integrate

__all__ = [
    "EstimationReport",
    "LangevinSolveConfig",
    "scale_equilibrium",
    "solve_langevin",
    "solve_linear",
    "solve_triad",
    "LangevinEstimator",
    "LinearSDEEstimator",
    "RationalResponseRegressor",
    "TriadEstimator",
    "LangevinModel",
    "LinearModel",
    "Observable",
    "TriadModel",
    "estimate_langevin",
    "estimate_linear",
    "estimate_triad",
    "RationalApproximant",
    "least_squares_fit",
    "pade_match_at_zero",
    "ResponseCurve",
    "estimate_response",
    "finite_difference_derivatives",
    "SimConfig",
    "Trajectory",
    "ensemble",
    "integrate",
]
