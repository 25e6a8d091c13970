"""Penalized partially linear regression with joint inference.

Fits E(Y|X,Z) = F(X'theta + g(Z)) by penalized (quasi-)likelihood over an
eigensystem basis for g, and provides joint confidence and prediction
intervals, a local likelihood-ratio test with its chi-square-mixture null
law, and a seeded Monte Carlo lab for the accompanying studies.
"""

from . import cli, eigensys, family, fitter, inference, lrt, simlab
from .errors import (
    ArgumentError,
    DataError,
    NumericError,
    RankError,
    SolverError,
    SplinthError,
    UnsupportedError,
)
from .family import Family, gamma, gaussian, logistic, parse_family
from .fitter import Dataset, FitResult, fit, fit_constrained, select_lambda
from .inference import JointCI, conditional_mean_ci, joint_ci, omega_hat, prediction_interval
from .lrt import Hypothesis, LrtResult, NullLaw, null_law
from .simlab import SimDesign, SimReport

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "DataError",
    "Dataset",
    "Family",
    "FitResult",
    "Hypothesis",
    "JointCI",
    "LrtResult",
    "NullLaw",
    "NumericError",
    "RankError",
    "SimDesign",
    "SimReport",
    "SolverError",
    "SplinthError",
    "UnsupportedError",
    "cli",
    "conditional_mean_ci",
    "eigensys",
    "family",
    "fit",
    "fit_constrained",
    "fitter",
    "gamma",
    "gaussian",
    "inference",
    "joint_ci",
    "logistic",
    "lrt",
    "null_law",
    "omega_hat",
    "parse_family",
    "prediction_interval",
    "select_lambda",
    "simlab",
]
