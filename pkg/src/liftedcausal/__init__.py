"""Exact lifted causal inference over parametric causal factor graphs."""

from .errors import (
    InconsistentEvidenceError,
    LiftedCausalError,
    ModelValidationError,
    ParseError,
    QueryError,
    ShatterRequiredError,
    SizeLimitError,
)
from .model import (
    Constraint,
    Domain,
    GroundRV,
    PCFG,
    PRV,
    Parfactor,
    RangeSpec,
    Violation,
    child_prv,
    ensure_valid,
    groundings,
    parent_factors,
    prv_groundings,
    top_constraint,
    validate,
)
from .ground import (
    Distribution,
    GroundFG,
    GroundFactor,
    JointTable,
    ground,
    ground_do,
    joint,
    oracle_query,
)

__version__ = "0.1.0"
