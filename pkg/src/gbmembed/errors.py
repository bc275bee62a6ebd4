"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class UnsupportedTargetError(ValueError):
    """Target law cannot be embedded (e.g. mean above one)."""


class SpecError(ValueError):
    """Malformed distribution / chain / diffusion specification.

    ``field`` names the offending input so the CLI can point at it.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class TooFewSamplesError(ValueError):
    pass


class ConsistencyError(RuntimeError):
    """Realized embedding value does not match any node of the chain tree."""


class CensoringError(RuntimeError):
    pass


class DescriptorError(SpecError):
    """Unsupported process, stopping rule or test-function descriptor."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to reach its tolerance.

    ``diagnostics`` holds the offending sub-interval and error estimate.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
