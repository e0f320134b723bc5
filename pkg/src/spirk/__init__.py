"""Stage-parallel implicit Runge-Kutta integration.

The stage system of an implicit Runge-Kutta step is decoupled by a low-rank
perturbation of the Butcher matrix, solved stage by stage, and corrected
exactly through a Sylvester equation with a low-rank right-hand side.
"""
from .errors import (
    ConvergenceError,
    EigenError,
    SingularShiftError,
    SpectralClashError,
    SpirkError,
    SymmetryError,
    TableauError,
    TransformError,
)
from .tableaux import ButcherTableau, Scheme, build_tableau
from .transforms import centroskew_split, eigendecompose, w_transform
from .sylvester import SylvesterProblem, SylvesterSolution
from .shifted import factor_all, solve_all
from .steppers import LinearIVP, NonlinearIVP, StageSolver, integrate, make_split
from .problems import ProblemSpec, heat_1d, heat_2d, wave_nonlinear

__version__ = "0.1.0"

__all__ = [
    "ButcherTableau",
    "ConvergenceError",
    "EigenError",
    "LinearIVP",
    "NonlinearIVP",
    "ProblemSpec",
    "Scheme",
    "SingularShiftError",
    "SpectralClashError",
    "SpirkError",
    "StageSolver",
    "SylvesterProblem",
    "SylvesterSolution",
    "SymmetryError",
    "TableauError",
    "TransformError",
    "build_tableau",
    "centroskew_split",
    "eigendecompose",
    "factor_all",
    "heat_1d",
    "heat_2d",
    "integrate",
    "make_split",
    "solve_all",
    "w_transform",
    "wave_nonlinear",
]
