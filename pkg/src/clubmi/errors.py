"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class NumericError(FloatingPointError):
    """A NaN or infinity appeared where finite values are required."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class UnsupportedError(ContractError):
    """The requested combination has no closed form or implementation."""
