"""Exception hierarchy shared by the library and the command line."""


class LfdrError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(LfdrError, ValueError):
    """Invalid configuration, flags or empty input."""

    exit_code = 1


class DataIOError(LfdrError, OSError):
    """Unreadable or unwritable files, malformed input rows."""

    exit_code = 2


class DomainError(LfdrError, ValueError):
    """An argument lies outside the mathematical domain of a function."""

    exit_code = 3
