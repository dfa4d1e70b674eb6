"""Exception types shared across the package."""


class ModeIVError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(ModeIVError):
    """A CSV schema does not match the file or is internally inconsistent."""


class ParseError(ModeIVError):
    """A CSV cell could not be parsed as a finite number."""


class ConfigError(ModeIVError):
    """A configuration object violates its invariants."""


class WeakInstrumentError(ModeIVError):
    """First-stage F statistic fell below the configured threshold."""


class SingularDesignError(ModeIVError):
    """A least-squares design is rank deficient and no ridge penalty was set."""


class DegenerateWeightsError(ModeIVError):
    """All aggregation weights over the modal members are zero."""
