"""In-repo LP/MILP solvers and exact ReLU encoding."""

from .bigm import ReluEncoding, encode_relu_bigm
from .build import ModelBuilder
from .lp import (
    DEFAULT_FEAS_TOL,
    LinearProgram,
    SolveResult,
    SolveStatus,
    SolverError,
    check_feasible,
    dump_lp,
    solve_lp,
)
from .milp import (
    DEFAULT_GAP_TOL,
    DEFAULT_NODE_LIMIT,
    MixedIntegerProgram,
    solve_milp,
)

__all__ = [
    "DEFAULT_FEAS_TOL",
    "DEFAULT_GAP_TOL",
    "DEFAULT_NODE_LIMIT",
    "LinearProgram",
    "MixedIntegerProgram",
    "ModelBuilder",
    "ReluEncoding",
    "SolveResult",
    "SolveStatus",
    "SolverError",
    "check_feasible",
    "dump_lp",
    "encode_relu_bigm",
    "solve_lp",
    "solve_milp",
]
