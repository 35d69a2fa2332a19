"""Root of every error udss raises on purpose."""


class UDSSError(Exception):
    """Base class for operation errors; the CLI maps these to exit code 2."""

    exit_code = 2


class ConfigError(UDSSError):
    """A configuration value failed validation."""

    exit_code = 1


class OutputError(UDSSError):
    """A report, script or plot could not be written."""
