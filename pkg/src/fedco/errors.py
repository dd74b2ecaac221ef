"""Exception taxonomy shared across the package."""


class FedcoError(Exception):
    """Base class for package-specific failures."""


class ConfigError(FedcoError):
    """Malformed or inconsistent configuration / dimension mismatch."""


class ParameterError(FedcoError):
    """Bound parameters outside their admissible range (e.g. q not in (0,1))."""


class FeasibilityError(FedcoError):
    """Budgets cannot accommodate any admissible decision."""


class GuardError(FedcoError):
    """Instance exceeds a tractability guard (brute-force enumeration)."""


class EmptyBufferError(FedcoError):
    """A client buffer holds no samples when a batch was requested."""
