"""Exception hierarchy shared by every module of the package."""


class PrsMpcError(Exception):
    """Base class for all errors raised by prsmpc."""


class NonConvergent(PrsMpcError):
    """A fixed-point iteration failed to contract (usually an unstable matrix)."""


class DomainError(PrsMpcError, ValueError):
    """Argument outside the domain of a scalar function."""


class CholeskyFailure(PrsMpcError):
    """Covariance matrix is not positive semidefinite."""


class Unbounded(PrsMpcError):
    """A set is unbounded in the queried direction."""


class EmptyTightening(PrsMpcError):
    """Tightened constraint set no longer contains the origin."""

    def __init__(self, message, face=None):
        super().__init__(message)
        self.face = face


class IterationLimit(PrsMpcError):
    """An iterative algorithm hit its iteration cap."""


class InitialInfeasible(PrsMpcError):
    """The MPC problem is infeasible at the initial state."""


class BackupInfeasible(PrsMpcError):
    """The Mode-2 backup problem was infeasible, which should never happen."""


class ConfigError(PrsMpcError):
    """An experiment configuration failed validation."""
