"""Exception and warning types shared across the package."""


class DomainError(ValueError):
    """Input violates a documented precondition."""


class ParseError(DomainError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class NumericalError(ArithmeticError):
    """A numerical routine produced non-finite output or failed to run."""


class DegenerateWarning(UserWarning):
    """Raised for well-defined but degenerate inputs (ties, empty rows, ...)."""
