"""Progressive batching L-BFGS with adaptive sample sizes, a variance-based
initial steplength and stochastic Armijo backtracking."""

from .batching import BatchControllerConfig
from .lbfgs import CurvatureMemory
from .linesearch import LineSearchConfig
from .optimizer import (
    CurvatureMode,
    PbqnConfig,
    PbqnSolver,
    SgConfig,
    StopConfig,
    SvrgConfig,
    run_pbqn,
    run_sg,
    run_svrg,
    tune_baseline,
)
from .problems import EvalCounter, LogisticProblem, QuadraticProblem

__version__ = "0.1.0"

__all__ = [
    "BatchControllerConfig",
    "CurvatureMemory",
    "CurvatureMode",
    "EvalCounter",
    "LineSearchConfig",
    "LogisticProblem",
    "PbqnConfig",
    "PbqnSolver",
    "QuadraticProblem",
    "SgConfig",
    "StopConfig",
    "SvrgConfig",
    "run_pbqn",
    "run_sg",
    "run_svrg",
    "tune_baseline",
]
