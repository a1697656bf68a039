"""Exception types and the process exit codes they map to."""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


class MicroequityError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = EXIT_INTERNAL


class ValidationError(MicroequityError):
    """Configuration or inputs that fail structural validation."""

    exit_code = EXIT_VALIDATION


class DataError(MicroequityError):
    """Malformed or inconsistent data encountered while parsing or processing."""

    exit_code = EXIT_DATA


class DegenerateSamplesError(DataError):
    """Two zero-variance samples with different means: no test statistic exists."""


class StaleInputError(ValidationError):
    """An upstream input changed after the artifact consuming it was built."""
