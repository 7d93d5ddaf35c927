"""Stochastic accelerated primal-dual (SAPD) toolkit with Richardson-Romberg variance reduction."""

__version__ = "0.1.0"

from .oracle import LogisticPerturbedSaddle, QuadraticSaddle, SaddleProblem, reference_solution
from .params import (
    CurvatureProfile,
    SapdParams,
    bound_constants,
    check_admissibility,
    params_from_theta,
    theta_thresholds,
)
from .solvers import SolverSpec, run
from .vr import ExtrapolationSpec, extrapolate, run_vr_sapd

__all__ = [
    "CurvatureProfile",
    "ExtrapolationSpec",
    "LogisticPerturbedSaddle",
    "QuadraticSaddle",
    "SaddleProblem",
    "SapdParams",
    "SolverSpec",
    "bound_constants",
    "check_admissibility",
    "extrapolate",
    "params_from_theta",
    "reference_solution",
    "run",
    "run_vr_sapd",
    "theta_thresholds",
]
