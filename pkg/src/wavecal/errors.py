"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class WavecalError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(WavecalError, ValueError):
    pass


class ParameterError(WavecalError, ValueError):
    pass


class SamplingError(WavecalError, ValueError):
    """A grid/distance combination the numerical model refuses to sample."""


class ConfigurationError(WavecalError, ValueError):
    pass


class ContractError(WavecalError, ValueError):
    pass


class TapeStateError(WavecalError, RuntimeError):
    pass


class DegenerateReferenceError(WavecalError, ValueError):
    pass


class DivergenceError(WavecalError, ArithmeticError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


class FormatError(WavecalError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ValidationError(WavecalError, ValueError):
    """Collects every problem found while validating a configuration."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)
