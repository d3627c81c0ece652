"""Exception types shared across the package."""


class PhasedyneError(Exception):
    """Base class for all package errors."""


class ConfigError(PhasedyneError):
    """Raised when a configuration value violates its documented constraint."""


class StiffnessError(PhasedyneError):
    """Raised when an integrator step exceeds its stability guard.

    Carries enough context (trajectory index, time) to locate the offending
    step instead of letting a too-coarse step silently corrupt statistics.
    """

    def __init__(self, message, trajectory=None, t=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.t = t


class NoSignalError(PhasedyneError):
    """Raised when a phase estimate is requested from a zero accumulator."""


class AmbiguousMinimumWarning(UserWarning):
    """Emitted when a noisy 1-D minimization cannot single out one minimum."""


class ModerateSqueezingWarning(UserWarning):
    """Emitted when a squeezing level is outside the moderate regime where
    the closed-form tracking variance is trustworthy."""
