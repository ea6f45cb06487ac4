"""Exception types. The CLI maps them onto its exit codes."""


class RiveradError(Exception):
    pass


class ConfigError(RiveradError, ValueError):
    """Invalid or unknown configuration (CLI exit code 1)."""


class DataError(RiveradError, ValueError):
    """Malformed input data or file content (CLI exit code 2)."""


class NumericalError(RiveradError, ArithmeticError):
    """Factorisation failure, divergence or non-finite intermediate (CLI exit code 3)."""


class ShapeError(RiveradError, ValueError):
    pass
