"""Exception hierarchy shared by every photostat stage.

Each error carries the process exit code the CLI reports for it.
"""

from typing import Any, Dict, Optional


class PhotostatError(Exception):
    """Base class for all photostat failures."""

    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": "error",
            "error": type(self).__name__,
            "message": self.message,
            "details": self.details,
        }


class ParameterValidationError(PhotostatError):
    exit_code = 2


class ClampRateError(ParameterValidationError):
    """Too many amplitude-noise samples had to be clamped at zero intensity."""


class RateTooHighError(ParameterValidationError):
    """Per-sample click probability reached the Bernoulli-thinning bound."""

    def __init__(self, message: str, sample_index: int, probability: float):
        super().__init__(message, {"sample_index": sample_index, "probability": probability})
        self.sample_index = sample_index
        self.probability = probability


class InsufficientStatisticsError(PhotostatError):
    exit_code = 3


class NonConvergenceError(PhotostatError):
    exit_code = 3


class PhotostatIOError(PhotostatError):
    exit_code = 4
