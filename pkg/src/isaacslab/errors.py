"""Exception hierarchy.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical-contract violations (CFL, diagonal dominance) with 4.
"""


class IsaacsLabError(Exception):
    """Base class for all package errors."""


class ValidationError(IsaacsLabError, ValueError):
    """Bad user input. ``field`` names the offending setting when known."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class GridError(ValidationError):
    pass


class DomainError(ValidationError):
    """Argument outside the domain of an operation (empty window, kappa range, ...)."""


class ConfigurationError(ValidationError):
    pass


class SymmetryError(ValidationError):
    pass


class UnsupportedFormError(ValidationError):
    pass


class BoundaryNodeError(DomainError):
    pass


class ResolutionError(DomainError):
    """A kernel or cylinder is too small to be resolved by the grid."""


class NumericalContractError(IsaacsLabError):
    """Scheme preconditions violated; the run cannot be trusted."""


class StepSizeError(NumericalContractError):
    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class DiscretizationError(NumericalContractError):
    def __init__(self, message, node=None, pair=None):
        super().__init__(message)
        self.node = node
        self.pair = pair
