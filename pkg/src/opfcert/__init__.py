"""Certification of disconnected AC-OPF feasible spaces.

Pipeline: parse a case, realize candidate operating points, restrict the
conic relaxation to a separating hyperplane, and tighten bounds until
the restricted relaxation is proven empty (disconnected) or the budget
runs out (indeterminate).
"""

from .bounds import VariableBounds
from .caseio import load_case, parse_matpower, read_report, to_network_case, write_report
from .certify import (
    Certificate,
    Hyperplane,
    apply_rotation_triple,
    build_hyperplane,
    certify_disconnected,
    certify_setpoint_infeasible,
    grid_sample_feasible_space,
    rotate_hyperplane,
    search_nonconvexity,
    segment_point,
    setpoint_labels,
)
from .envelopes import cos_envelope, mccormick, sin_envelope, square_envelope, trig_bounds
from .network import (
    Branch,
    Bus,
    CostCurve,
    FeasibilityReport,
    Generator,
    NetworkCase,
    OperatingPoint,
    SetpointVector,
    branch_flow,
    constraint_check,
    generation_cost,
    multistart_newton,
    newton_solve,
    point_from_voltages,
    power_balance_residual,
    setpoint_of,
)
from .obbt import ObbtOutcome, obbt_fixpoint, obbt_pass, write_trajectories
from .program import ConicProgram, LiftedVars, build_qc, lift_point
from .solver import SolveResult, SolveStatus, solve

__version__ = "0.1.0"
