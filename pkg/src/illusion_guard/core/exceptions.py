"""Exception handling and custom exceptions."""

from typing import Any, Dict, Optional


class IllusionGuardError(Exception):
    """Base exception for the illusion-guard testbed."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.message = message
        self.details = details or {}


class ConfigurationError(IllusionGuardError):
    """Raised when an experiment configuration is invalid."""


class DataGenerationError(IllusionGuardError):
    """Raised when the synthetic dataset cannot be generated."""


class RankDeficiencyError(IllusionGuardError):
    """Raised when a least-squares system is singular."""

    def __init__(self, what: str, rank: int, expected: int) -> None:
        super().__init__(
            f"{what}: normal matrix is rank deficient (rank {rank} < {expected})",
            {"what": what, "rank": rank, "expected": expected},
        )
        self.rank = rank
        self.expected = expected


class DivergenceError(IllusionGuardError):
    """Raised when iterative training produces a non-finite loss."""


class UndefinedScoreError(IllusionGuardError):
    """Raised when a cosine score is requested for a zero-norm embedding."""


class SingularGradientError(IllusionGuardError):
    """Raised when the cosine gradient is requested at a zero embedding."""


class NumericFailureError(IllusionGuardError):
    """Raised when a sanitizer produces non-finite intermediates."""


class ShapeError(IllusionGuardError):
    """Raised when a pixel vector does not match the configured grid."""


class ConsensusError(IllusionGuardError):
    """Raised when a consensus decision cannot be completed."""


class EmptySummaryError(IllusionGuardError):
    """Raised when metrics are requested over no records."""


class ArtifactError(IllusionGuardError):
    """Raised when a stored dataset or model cannot be read or written."""


class ReportError(IllusionGuardError):
    """Raised when a report cannot be emitted."""


class ExperimentError(IllusionGuardError):
    """Raised when an experiment step fails; carries the sample context."""

    def __init__(self, message: str, sample_id: Optional[int] = None, **details: Any) -> None:
        context = dict(details)
        if sample_id is not None:
            context["sample_id"] = sample_id
        super().__init__(message, context)
        self.sample_id = sample_id
