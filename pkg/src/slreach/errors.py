"""Exception types raised across the package."""


class SlrError(Exception):
    """Base class for all package-specific errors."""


class FieldConfigError(SlrError):
    """Vector field parameters are malformed (shapes, widths, activation)."""


class UnsupportedFieldError(SlrError):
    """Requested operation is not available for this field family."""


class IntegrationError(SlrError):
    """Adaptive step size underflowed or the step budget was exhausted.

    Carries the last time the integrator reached before giving up.
    """

    def __init__(self, message: str, t_reached: float):
        super().__init__(f"{message} (last good time t={t_reached!r})")
        self.t_reached = t_reached


class EnclosureError(SlrError):
    """A step-local a-priori enclosure could not be validated."""

    def __init__(self, message: str, t_reached: float):
        super().__init__(f"{message} (reached t={t_reached!r})")
        self.t_reached = t_reached


class DomainError(SlrError):
    """Input outside the mathematical domain (off-sphere point, bad radius)."""


class SingularFlowError(SlrError):
    """Flow sensitivity matrix is numerically singular."""


class ZeroDistanceError(SlrError):
    """Metric distance gradient requested at the ellipsoid center."""


class ConfigError(SlrError):
    """Run configuration failed validation.

    ``errors`` lists every individual problem found, not just the first.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(
            f"  - {e}" for e in self.errors))


class OracleError(SlrError):
    """A Monte Carlo or grid oracle could not produce a trustworthy answer."""
