"""Exception types shared across the package.

Each failure class that the command line maps to its own exit status has a
dedicated subclass, so callers can branch on the type instead of parsing
messages.
"""


class MassSplitError(Exception):
    """Base class for all anticipated failures."""


class AssumptionError(MassSplitError):
    """The potential fails a structural assumption or an evaluation."""


class BranchDomainError(MassSplitError):
    """A force value lies outside the domain of the requested branch."""


class StabilityError(MassSplitError):
    """The launch data violate the stability inequality."""


class ContractionError(MassSplitError):
    """A fixed-point iteration failed to contract or left its class."""


class OrderingError(MassSplitError):
    """Characteristics crossed or the launch ordering is broken."""


class ConvergenceError(MassSplitError):
    """The run did not settle before the horizon."""


class ConfigError(MassSplitError):
    """Invalid run configuration."""
