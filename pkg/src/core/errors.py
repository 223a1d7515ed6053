"""
Exception hierarchy shared by every module of the toolkit.
"""

from typing import Optional


class BDBError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(BDBError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class BatchSizeError(BDBError, ValueError):
    """Batch normalization in train mode needs at least two samples."""


class SpecError(BDBError, ValueError):
    """A DropSpec holds out-of-range ratios or probabilities."""


class BatchCompositionError(BDBError, ValueError):
    """A metric-learning batch does not have the required P x K layout."""


class LabelError(BDBError, ValueError):
    """A class label is outside the classifier range."""


class ParseError(BDBError):
    """A text file (manifest, embeddings, config) could not be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DatasetError(BDBError):
    """A DatasetSplit invariant does not hold."""

    def __init__(self, rule: str, detail: str = ""):
        self.rule = rule
        message = f"dataset rule violated: {rule}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class SamplerError(BDBError):
    """The P x K sampler cannot build a batch from the given records."""


class ConfigError(BDBError, ValueError):
    """A run configuration value is unknown, malformed or infeasible."""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class EvalError(BDBError):
    """Evaluation inputs are inconsistent (empty gallery, K too large, ...)."""


class ScheduleError(BDBError, ValueError):
    """An epoch lies outside the learning-rate schedule."""


class TrainingError(BDBError):
    """Training produced a non-finite gradient or loss."""

    def __init__(self, message: str, parameter: Optional[str] = None):
        self.parameter = parameter
        if parameter is not None:
            message = f"{message} (parameter: {parameter})"
        super().__init__(message)
