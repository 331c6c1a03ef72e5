"""Exception hierarchy.  The CLI maps each class to an exit code."""


class CellScatterError(Exception):
    """Base class for errors raised by this package."""


class InputError(CellScatterError, ValueError):
    """Malformed input data or mask files (exit code 2)."""


class NumericalError(CellScatterError, ArithmeticError):
    """An estimator could not produce a valid result (exit code 3)."""


class DegenerateError(NumericalError, ValueError):
    """Zero dispersion, all-zero distances or similar degenerate input."""


class ConfigError(CellScatterError, ValueError):
    """Invalid configuration or campaign file (exit code 4)."""
