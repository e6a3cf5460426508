"""Exception types raised across the package."""


class GoldeError(Exception):
    """Base class for all package errors."""


class DimensionError(GoldeError, ValueError):
    pass


class DegenerateReflectorError(GoldeError, ValueError):
    """A reflector vector is isotropic (its quadratic self-product is ~0)."""


class ContractError(GoldeError, ValueError):
    """An input violates an operation's precondition."""


class UnsupportedSignatureError(GoldeError, ValueError):
    pass


class DomainError(GoldeError, ValueError):
    pass


class DiagnosticsUnavailableError(GoldeError):
    """A relation matrix is too large to materialize."""


class NumericError(GoldeError, ArithmeticError):
    """A non-finite value showed up during loss or gradient computation."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class DatasetError(GoldeError):
    pass


class DatasetParseError(DatasetError, ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class CheckpointError(GoldeError):
    pass


class ConfigError(GoldeError, ValueError):
    pass
