"""Particle toolkit for mean-field optimal control of Bolza type."""

__version__ = "0.1.0"

from .errors import (
    AnalysisError,
    BlowUpError,
    DomainError,
    InvalidControlError,
    InvalidMapError,
    MFBError,
    SelectionError,
    SizeError,
)
from .measure import DiscreteMeasure, interpolate_along_plan, moment, pushforward
from .transport import (
    TransportPlan,
    barycentric_projection,
    optimal_plan,
    plan_interpolation_cost,
    wasserstein,
)
from .dynamics import Trajectory, flow
from .problem import (
    ControlSignal,
    ProblemSpec,
    check_derivatives,
    evaluate_cost,
    validate_hypotheses,
)
from .solver import SolveReport, SolverOptions, cost_gradient, solve
from .pmp import (
    StateCostateCloud,
    check_maximization,
    check_sensitivity,
    forward_backward_sweep,
    hamiltonian,
)
from .analysis import (
    AnalysisReport,
    ValueFunction,
    dini_lower_derivative,
    lipschitz_estimate,
    semiconcavity_test,
    superdifferential_test,
    value,
)
from .feedback import (
    FeedbackSet,
    closed_loop_simulate,
    feedback_set,
    verify_optimality_via_feedback,
)
