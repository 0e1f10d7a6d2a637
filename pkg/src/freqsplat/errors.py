"""Exception types shared across the package."""


class FreqSplatError(Exception):
    """Base class for all errors raised by freqsplat."""


class ParameterError(FreqSplatError, ValueError):
    """Invalid or non-finite parameters, or violated preconditions."""


class ShapeError(FreqSplatError, ValueError):
    """Array dimensions that do not agree."""


class FormatError(FreqSplatError):
    """Malformed image, config, or checkpoint file."""


class TrainingDiverged(FreqSplatError, RuntimeError):
    """A non-finite loss was produced during training."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot
