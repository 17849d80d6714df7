class LegidError(Exception):
    """Base class for every error raised by legid."""


class ModelError(LegidError, ValueError):
    """A model description failed to parse or violates a model invariant."""


class StateError(LegidError, ValueError):
    """A configuration, velocity or acceleration does not match the model."""


class DataError(LegidError, ValueError):
    """A trajectory log or dataset is malformed."""


class SignalError(LegidError, ValueError):
    """A time series cannot be conditioned with the requested settings."""


class ScenarioError(LegidError, ValueError):
    """A synthetic scenario cannot be generated."""


class ConfigError(LegidError, ValueError):
    """A run configuration is invalid."""


class SolverError(LegidError, RuntimeError):
    """The identification problem could not be solved or certified."""
