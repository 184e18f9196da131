"""Map testbed exceptions to process exit codes."""

from typing import Dict, Type

from ..core.exceptions import (
    ArtifactError,
    ConfigurationError,
    ConsensusError,
    DataGenerationError,
    DivergenceError,
    ExperimentError,
    IllusionGuardError,
    NumericFailureError,
    RankDeficiencyError,
    ReportError,
)
from ..core.logging import get_logger

logger = get_logger("cli.handlers")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

EXIT_CODE_MAP: Dict[Type[BaseException], int] = {
    ConfigurationError: EXIT_CONFIG,
    ArtifactError: EXIT_IO,
    ReportError: EXIT_IO,
    DataGenerationError: EXIT_NUMERIC,
    RankDeficiencyError: EXIT_NUMERIC,
    DivergenceError: EXIT_NUMERIC,
    NumericFailureError: EXIT_NUMERIC,
    ConsensusError: EXIT_NUMERIC,
    ExperimentError: EXIT_NUMERIC,
}


def exit_code_for(exc: BaseException) -> int:
    """Exit code of the closest mapped exception type."""
    for klass in type(exc).__mro__:
        if klass in EXIT_CODE_MAP:
            return EXIT_CODE_MAP[klass]
    return EXIT_FAILURE


def handle_error(exc: BaseException) -> int:
    """Log an error that ended a command and return its exit code."""
    code = exit_code_for(exc)
    if isinstance(exc, IllusionGuardError):
        logger.error(f"{type(exc).__name__}: {exc.message}", extra={"details": exc.details})
        if exc.details:
            logger.error(f"Details: {exc.details}")
    else:
        logger.exception(f"Unexpected error: {exc}")
    return code
