"""Exception hierarchy."""


class HorizonError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(HorizonError, ValueError):
    """A vector or orbit does not have the expected shape."""


class InverseConvergenceError(HorizonError):
    """Newton iteration for an inverse branch failed to converge."""


class ResolutionError(HorizonError):
    """A grid is too coarse or too small for the requested operation."""


class DegreeError(HorizonError):
    """The argument-principle degree count was not a clean integer."""


class ConfigError(HorizonError):
    """Malformed or incomplete experiment configuration."""
