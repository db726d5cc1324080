"""Numerical toolkit for globally solvable coupled forward-backward systems.

Workflow: describe a problem (:class:`FBSDEProblem`), check its
structural and monotonicity conditions, build the global decoupling
field by stitching small-interval Picard solves backward in time, then
simulate forward paths or verify game equilibria against it.
"""

from .applications import (
    BUILTIN_NAMES,
    DelayedBSDESpec,
    GameParams,
    LQControlParams,
    build_builtin,
    oracle,
    verify_nash,
)
from .bounds import (
    LipschitzEnvelope,
    Partition,
    analytic_cap,
    integrate_envelope,
    make_partition,
    select_delta,
)
from .conditions import (
    ConditionReport,
    QuotientSet,
    check_monotonicity,
    check_peng_wu,
    check_structural,
    difference_quotients,
    locality_radius,
)
from .errors import (
    CoefficientEvaluationError,
    ConfigError,
    DeltaSelectionError,
    EnvelopeOverflowError,
    ExpressionError,
    FBSDEKitError,
    FixedPointError,
    PicardNonConvergenceError,
    ZBoundExceededError,
)
from .expressions import Expression, compile_expression
from .global_solver import (
    DecouplingField,
    Diagnostics,
    build_decoupling_field,
    export_diagnostics_json,
    export_field_csv,
    export_paths_csv,
    simulate_forward,
    verify_sandwich,
)
from .local_solver import (
    FieldSlice,
    GridSpec,
    backward_step,
    gauss_hermite_rule,
    interpolate_field,
    picard_solve_subinterval,
)
from .problem import FBSDEProblem, SolutionPath, constant_sigma, validate_problem

__version__ = "1.0.0"

__all__ = [
    "BUILTIN_NAMES",
    "CoefficientEvaluationError",
    "ConditionReport",
    "ConfigError",
    "DecouplingField",
    "DelayedBSDESpec",
    "DeltaSelectionError",
    "Diagnostics",
    "EnvelopeOverflowError",
    "Expression",
    "ExpressionError",
    "FBSDEKitError",
    "FBSDEProblem",
    "FieldSlice",
    "FixedPointError",
    "GameParams",
    "GridSpec",
    "LQControlParams",
    "LipschitzEnvelope",
    "Partition",
    "PicardNonConvergenceError",
    "QuotientSet",
    "SolutionPath",
    "ZBoundExceededError",
    "analytic_cap",
    "backward_step",
    "build_builtin",
    "build_decoupling_field",
    "check_monotonicity",
    "check_peng_wu",
    "check_structural",
    "compile_expression",
    "constant_sigma",
    "difference_quotients",
    "export_diagnostics_json",
    "export_field_csv",
    "export_paths_csv",
    "gauss_hermite_rule",
    "integrate_envelope",
    "interpolate_field",
    "locality_radius",
    "make_partition",
    "oracle",
    "picard_solve_subinterval",
    "select_delta",
    "simulate_forward",
    "validate_problem",
    "verify_nash",
    "verify_sandwich",
]
