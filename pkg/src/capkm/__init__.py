"""Capacitated k-median with (1+eps) capacity violation."""

from .estimator import CapacitatedKMedian
from .instance import (Instance, ParseError, gen_battery_instance, gen_euclidean,
                       gen_gap_instance, load_instance, parse_instance, save_instance,
                       serialize_instance, validate)
from .oracle import ExactResult, GuardExceeded, exact_solve, reference_emd
from .pipeline import (InfeasibleInstance, SolveConfig, SolveReport, StageError,
                       params_from_eps, round_fractional, solve)
from .relaxation import FractionalSolution

__version__ = "0.1.0"

__all__ = [
    "CapacitatedKMedian", "Instance", "ParseError", "gen_battery_instance", "gen_euclidean",
    "gen_gap_instance", "load_instance", "parse_instance", "save_instance",
    "serialize_instance", "validate", "ExactResult", "GuardExceeded", "exact_solve",
    "reference_emd", "InfeasibleInstance", "SolveConfig", "SolveReport", "StageError",
    "params_from_eps", "round_fractional", "solve", "FractionalSolution",
]
