"""Shared exception types."""


class AdvLabError(Exception):
    """Base for every error this package raises deliberately; the CLI turns
    these into a one-line message and exit code 2."""


class ConfigurationError(AdvLabError, ValueError):
    """Raised for structurally invalid networks, configs, or CLI arguments."""


class DataFormatError(AdvLabError, ValueError):
    """Raised when a dataset file is malformed (bad magic, truncation, ...)."""


class DivergenceError(AdvLabError, ArithmeticError):
    """Raised when training or an attack produces non-finite numbers."""
