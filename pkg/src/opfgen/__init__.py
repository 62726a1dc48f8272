"""AC-OPF dataset generation and quality evaluation toolkit."""

from . import errors
from .grid import Network, parse_case, build_ybus, branch_admittances
from .polytope import HPolytope, build_load_polytope, chebyshev_center, cdhr_sample
from .schedule import TotalLoadSupport, support, draw_uniform, truncate_support
from .acopf import LoadSetpoint, OpfProblem, build_problem, solve, validate, is_feasible
from .metrics import VariableMatrix, activation_matrices, q1, q2, q3, evaluate_dataset, compare
from .pipeline import GenerationConfig, DatasetHandle, generate, load_dataset

__version__ = "0.1.0"
