"""Exception types shared across the package."""


class DomainError(ValueError):
    """A point lies outside the open disk, or a kernel was evaluated on
    (or too close to) the diagonal where it is singular."""


class SingularConfigurationError(ValueError):
    """Two vortices (nearly) coincide.  Carries the offending indices."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = indices


class BlowUpError(RuntimeError):
    """Integration aborted: step size underflow near a collision or the
    boundary.  Carries the time stamp of the abort."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class EnsembleSizeError(ValueError):
    """An ensemble statistic was requested on too few members.  Carries
    the minimum required count."""

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration key/value."""


class QuadratureError(RuntimeError):
    """Stored quadrature could not certify basis orthonormality."""
