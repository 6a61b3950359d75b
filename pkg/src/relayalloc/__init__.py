"""Energy-minimal relay selection, RB assignment and power allocation for short-packet uplink."""

from .fbl_rate import (LinkBudget, PayloadTooLargeError, invert_power, perspective_rate, q_func,
                       q_inv, rate_approx, rate_exact)
from .model import (AssignmentSolution, ProblemInstance, check_feasibility, round_to_binary,
                    total_power)
from .oracle import assignment_exact, enumerate_exact
from .sca import ScaConfig, SolverReport, default_initial_phi, solve_ncp, solve_qp
from .scenario import FactoryLayout, Scenario, SystemParams, generate_scenario

__version__ = "0.1.0"

__all__ = [
    "AssignmentSolution", "FactoryLayout", "LinkBudget", "PayloadTooLargeError",
    "ProblemInstance", "ScaConfig", "Scenario", "SolverReport", "SystemParams",
    "assignment_exact", "check_feasibility", "default_initial_phi", "enumerate_exact",
    "generate_scenario", "invert_power", "perspective_rate", "q_func", "q_inv",
    "rate_approx", "rate_exact", "round_to_binary", "solve_ncp", "solve_qp", "total_power",
]
