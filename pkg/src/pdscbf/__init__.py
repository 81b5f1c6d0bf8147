"""Projected dynamical systems, their CBF approximations, and the tools to
compare the two."""

__version__ = "0.1.0"

from .analysis import (
    SweepResult,
    lemma_checks,
    perturbation_certificate,
    run_sweep,
    sigma_perturbation_member,
)
from .bounds import BoundsReport, estimate_constants, sigma_of_alpha
from .dynamics import FieldKind, Interconnection, di_residual, eval_field
from .errors import (
    ConfigError,
    DomainError,
    EstimationError,
    EvaluationError,
    InfeasibleError,
    PdsCbfError,
    PreconditionError,
    ProjectionError,
    RegularityError,
)
from .geometry import (
    Classification,
    ConeData,
    ConstraintSet,
    annulus_set,
    ball_set,
    classify,
    distance_to_boundary,
    interval_set,
    tangent_halfspace,
)
from .integrate import IntegrationConfig, Scheme, Trajectory, integrate, refine_check
from .projection import (
    MetricMatrix,
    cbf_field_value,
    project_point_to_set,
    project_tangent,
    qp_oracle,
)
from .scenarios import ScenarioConfig, build_feedback_opt, build_scenario, build_synchronverter, build_synthetic
