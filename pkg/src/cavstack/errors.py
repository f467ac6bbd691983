"""Exception types shared across the planning and control layers."""


class CavError(Exception):
    """Base class for all errors raised by this package."""


class DiscriminantNegative(CavError, ValueError):
    """Requested battery power exceeds what the battery can deliver."""


class Infeasible(CavError):
    """An optimal control problem has no admissible solution."""


class NoRoute(CavError):
    """No admissible path exists between origin and destination."""


class EmptySamples(CavError, ValueError):
    """A quantile was requested from an empty sample set."""


class ScenarioError(CavError):
    """A scenario file is malformed or references missing data."""
