"""Structured errors shared by all modules.

Every validation failure raises one of these instead of a bare ValueError
so the CLI can map failures onto its exit-code contract.
"""


class StochheatError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidConfigError(StochheatError):
    """A configuration value violates a documented precondition."""

    exit_code = 2


class InvalidRegionError(InvalidConfigError):
    """A spatial region is empty, overlapping, or escapes the domain."""


class InvalidDensityError(InvalidConfigError):
    """An actuator density violates the box or mass-budget constraints."""


class InvalidBudgetError(InvalidDensityError):
    """The requested actuator mass budget is infeasible."""


class DegenerateObservationError(StochheatError):
    """The observation quadratic form is singular at this resolution.

    Carries the diagnostic that triggered the failure (smallest eigenvalue
    or a deficiency dimension) so callers can report it.
    """

    exit_code = 3

    def __init__(self, message, mu_min=None, deficiency=None):
        super().__init__(message)
        self.mu_min = mu_min
        self.deficiency = deficiency


class IterationLimitError(StochheatError):
    """An iterative linear solver ran out of iterations."""

    exit_code = 4

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class OptimizerError(StochheatError):
    """The outer optimizer aborted; the last consistent iterate is attached."""

    exit_code = 5

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class InternalConsistencyError(StochheatError):
    """A build-time self check failed (forward/adjoint transpose mismatch)."""
