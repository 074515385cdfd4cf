"""Exception types shared across the package.

The CLI maps these onto exit codes (config -> 4, capacity -> 3), so solver
and assembly code should raise the specific type rather than bare ValueError
whenever the distinction matters to a caller.
"""


class ShapeMismatchError(ValueError):
    """Operands have incompatible mode dimensions or ranks."""


class CapacityError(RuntimeError):
    """A dense bridge or classical solve would exceed the configured size cap."""


class ConfigError(ValueError):
    """Invalid problem configuration (bad BC set, malformed domain, ...)."""


class DegenerateMeshError(ValueError):
    """Nonpositive or sign-flipping Jacobian determinant detected."""


class EvaluationError(RuntimeError):
    """A black-box evaluator returned a non-finite value."""


class SolverError(RuntimeError):
    """Linear solver breakdown (singular local system, CG failure, ...)."""


class FormatError(ValueError):
    """Corrupt or unrecognized serialized container."""
