"""Exception types raised by the solver and checker modules."""

from __future__ import annotations


class FBSDEKitError(Exception):
    """Base class for all package errors."""


class CoefficientEvaluationError(FBSDEKitError):
    """A coefficient handle returned a non-finite value.

    Carries the offending evaluation point so the caller can report it.
    """

    def __init__(self, name: str, point: dict):
        self.name = name
        self.point = point
        super().__init__(f"non-finite output of {name} at {point}")


class EnvelopeOverflowError(FBSDEKitError):
    """The slope-envelope ODE exceeds the floating range for the given (K, n, T)."""

    def __init__(self, K: float, n: int, T: float):
        self.K, self.n, self.T = K, n, T
        super().__init__(f"envelope overflows floating range for K={K}, n={n}, T={T}")


class DeltaSelectionError(FBSDEKitError):
    """The contraction probe failed to find a sub-interval length that contracts."""


class FixedPointError(FBSDEKitError):
    """The implicit driver step at a grid node did not converge."""

    def __init__(self, node_x: float, residual: float):
        self.node_x = node_x
        self.residual = residual
        super().__init__(
            f"implicit driver step did not converge at x={node_x} (residual {residual:.3e})"
        )


class PicardNonConvergenceError(FBSDEKitError):
    """Picard iteration over the coupling stopped contracting.

    Usually means the sub-interval is too long; the caller should shrink it.
    """

    def __init__(self, interval, ratios):
        self.interval = interval
        self.ratios = list(ratios)
        super().__init__(
            f"Picard iteration not contracting on {interval}; last ratios {self.ratios[-3:]}"
        )


class ZBoundExceededError(FBSDEKitError):
    """Computed Z values left the super-quadratic locality box |z| <= M."""

    def __init__(self, value: float, bound: float):
        self.value = value
        self.bound = bound
        super().__init__(f"|z| = {value:.6g} exceeds locality bound M = {bound:.6g}")


class ConfigError(FBSDEKitError):
    """Invalid experiment configuration."""


class ExpressionError(FBSDEKitError):
    """Syntax or name error in the coefficient expression sub-language."""

    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")
