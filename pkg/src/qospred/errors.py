"""Exception hierarchy shared across the package.

DatasetError and ConfigError indicate bad input (CLI exit code 2);
PipelineError indicates a failure while computing (exit code 1).
"""


class QospredError(Exception):
    """Base class for all package errors."""


class DatasetError(QospredError):
    """Missing, malformed or inconsistent dataset files."""


class ConfigError(QospredError):
    """Invalid configuration key or value, or bad command arguments."""


class PipelineError(QospredError):
    """Failure inside the prediction pipeline."""
