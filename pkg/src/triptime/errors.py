"""Exception hierarchy shared by all triptime modules."""


class TripTimeError(Exception):
    """Base class for all errors raised by this package."""


class OutOfBoundsError(TripTimeError):
    """A point lies outside the configured bounding box."""


class MalformedHeaderError(TripTimeError):
    """Input CSV header is missing columns required by the schema."""


class UnorderedInputError(TripTimeError):
    """GPS records for a vehicle regress in time."""


class EmptyDatasetError(TripTimeError):
    """An operation that requires at least one trip received none."""


class InsufficientDataError(TripTimeError):
    """Too few samples to fit a model."""


class SeriesTooShortError(TripTimeError):
    """Time series too short (or too gappy) for the requested fit."""


class SingularSystemError(TripTimeError):
    """Least-squares design is singular beyond recovery."""


class HorizonTooFarError(TripTimeError):
    """Forecast target lies more than one season beyond the observed series."""


class NoReferenceAvailableError(TripTimeError):
    """Every level of the speed-reference fallback chain is empty."""


class NoNeighborsError(TripTimeError):
    """An estimator was handed an empty neighbor set."""


class DegenerateDesignError(TripTimeError):
    """Regression design has no variance in the predictor."""


class LengthMismatchError(TripTimeError):
    """Paired vectors have different lengths."""


class EmptyInputError(TripTimeError):
    """Metric computation received empty vectors."""


class InvalidSpecError(TripTimeError):
    """Synthetic-data spec fails validation."""


class InsufficientPairsError(TripTimeError):
    """Not enough neighbor pairs could be sampled for the diagnostic report."""


class ConfigError(TripTimeError):
    """Configuration file is malformed or inconsistent."""
