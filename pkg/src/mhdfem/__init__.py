"""Structure-preserving finite elements for incompressible MHD.

Lowest-order de Rham compatible discretisation on tetrahedra: P2-P1
Taylor-Hood velocity/pressure, Raviart-Thomas (RT0) magnetic field and
Nedelec (N0) electric field, advanced by backward Euler with either a
linearised step or a Picard-iterated fully implicit step.
"""
from .analysis import starred_differences, starred_errors
from .assembly import Spaces, build_spaces
from .config import RunConfig, parse_config
from .errors import CheckFailure, ConfigError, PicardError, RunFailure
from .linalg import LinearSolver, SolverError, solve
from .mesh import Mesh, build_box_mesh
from .mms import ExactSolution
from .scheme import ProblemParams, State, TimeConfig, initial_state, run, step_linearized, step_picard

__version__ = "0.1.0"

__all__ = [
    "starred_differences", "starred_errors",
    "Spaces", "build_spaces", "RunConfig", "parse_config", "CheckFailure", "ConfigError",
    "PicardError", "RunFailure", "LinearSolver", "SolverError", "solve", "Mesh", "build_box_mesh",
    "ExactSolution", "ProblemParams", "State", "TimeConfig", "initial_state", "run",
    "step_linearized", "step_picard",
]
