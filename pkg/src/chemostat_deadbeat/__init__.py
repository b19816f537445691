"""Competitive chemostat simulation with a hybrid dead-beat observer."""
from .control import ClosedLoopRun, FeedbackParams, closed_loop_simulate, feedback_D
from .dynamics import (
    BoundedByInflow,
    ChemostatModel,
    InputSignal,
    OpenHalfLine,
    State,
    Trajectory,
    equilibrium,
    integrate,
    rhs,
)
from .exceptions import (
    DegenerateKineticsError,
    DomainError,
    EvaluationError,
    IntegrationDomainError,
    SingularGramError,
    UnsupportedModelError,
    WashoutError,
)
from .kinetics import CustomRate, Monod, QuadraticCoeffs, SpeciesParams, eval_mu, kappa, observability_quadratic
from .observability import (
    check_batch_identifiability,
    check_conditions,
    find_coexistence,
    singular_trajectory,
)
from .observer import (
    GramRecord,
    ObserverWindow,
    explicit_n2_reset,
    operator_P,
    phi_profiles,
    residual_profile,
    run_observer,
    window_from_trajectory,
)

__version__ = "0.1.0"
