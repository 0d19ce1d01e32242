"""Single-loop bilevel optimization with barrier-safe sequential QCQP steps."""

from .errors import *  # noqa: F401,F403
from .linesearch import LineSearchConfig, LineSearchResult, backtrack, check_safety_chain, lemma_step_bound
from .problem import BilevelProblem, Iterate, ProblemEval, check_regularity, evaluate
from .qcqp import Branch, QcqpParams, QcqpSolution, recover_dual, solve_direction
from .solver import (IterationRecord, KktResidual, SolveReport, SolverConfig, Status, init_feasible,
                     kkt_residual, solve)

__version__ = "0.1.0"
