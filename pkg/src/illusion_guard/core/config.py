"""Process-level settings using Pydantic V2 settings.

Experiment parameters live in the YAML experiment file (see ``schemas.config``);
the environment may only redirect the output directory and set the log level.
"""

from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .logging import setup_logging

DEFAULT_OUTPUT_DIR = Path("results")


class Settings(BaseSettings):
    """Testbed settings with environment variable support."""

    model_config = SettingsConfigDict(
        env_prefix="ILLUSION_GUARD_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    debug: bool = Field(default=False, description="Verbose log format")
    log_level: str = Field(default="INFO", description="Logging level")
    output_dir: Optional[Path] = Field(
        default=None, description="Overrides the experiment output directory"
    )

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, value: str) -> str:
        """Validate log level."""
        valid_levels = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
        upper_value = value.upper()
        if upper_value not in valid_levels:
            raise ValueError(f"Log level must be one of: {', '.join(sorted(valid_levels))}")
        return upper_value

    def configure_logging(self, log_level: Optional[str] = None) -> None:
        """Configure testbed logging."""
        level = self.validate_log_level(log_level) if log_level else self.log_level
        setup_logging(level, self.debug)

    def resolve_output_dir(self, cli_value: Optional[Path], config_value: Optional[Path]) -> Path:
        """Apply CLI > environment > config file > default precedence."""
        for candidate in (cli_value, self.output_dir, config_value):
            if candidate is not None:
                return Path(candidate)
        return DEFAULT_OUTPUT_DIR


@lru_cache()
def get_settings() -> Settings:
    """Get cached process settings."""
    return Settings()
