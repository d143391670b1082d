"""Linear-programming and min-cost-flow kernels."""

from .lp import (EQ, GE, INFEASIBLE, LE, OPTIMAL, UNBOUNDED, LinearProgram,
                 LpBuilder, LpResult, NumericalError, lp_solve)
from .flow import (InfeasibleFlow, MinCostFlow, TransportProblem, mcf_assign,
                   transport_solve)

__all__ = [
    "EQ", "GE", "LE", "OPTIMAL", "INFEASIBLE", "UNBOUNDED",
    "LinearProgram", "LpBuilder", "LpResult", "NumericalError", "lp_solve",
    "InfeasibleFlow", "MinCostFlow", "TransportProblem", "mcf_assign",
    "transport_solve",
]
