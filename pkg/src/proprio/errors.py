"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad user input: malformed files, out-of-range parameters, inconsistent streams."""


class GraphError(RuntimeError):
    """Structural problem in a factor graph (duplicate/missing keys, bad covariance)."""


class GaugeDeficiencyError(RuntimeError):
    """Raised when an undamped normal-equation solve hits a rank-deficient system.

    Carries the numerically estimated nullspace dimension so callers can
    distinguish an unanchored graph (dimension >= 4) from a modeling bug.
    """

    def __init__(self, nullspace_dim, message=None):
        self.nullspace_dim = nullspace_dim
        super().__init__(message or f"rank-deficient system, nullspace dimension {nullspace_dim}")


class UnreachableTargetError(ValidationError):
    """Inverse kinematics target outside the leg workspace."""

    def __init__(self, time, leg, message=None):
        self.time = time
        self.leg = leg
        super().__init__(message or f"foot target unreachable for leg {leg} at t={time:.4f}s")
