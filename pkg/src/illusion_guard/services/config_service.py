"""Loading, validating and echoing experiment configuration files."""

from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from pydantic import ValidationError

from ..core.exceptions import ConfigurationError, ReportError
from ..core.logging import get_logger
from ..schemas.config import ExperimentConfig

logger = get_logger("config_service")

EFFECTIVE_CONFIG_FILE = "config.effective.yaml"


def format_validation_errors(exc: ValidationError) -> List[Dict[str, str]]:
    """Flatten pydantic errors into ``field -> path`` / message pairs."""
    return [
        {
            "field": " -> ".join(str(x) for x in error["loc"]),
            "message": error["msg"],
            "type": error["type"],
        }
        for error in exc.errors()
    ]


def parse_config(
    raw: Dict[str, Any], seed: Optional[int] = None, threads: Optional[int] = None
) -> ExperimentConfig:
    """Validate a raw mapping, applying command-line overrides first."""
    data = dict(raw)
    if seed is not None:
        data["seed"] = seed
    if threads is not None:
        data["threads"] = threads
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        errors = format_validation_errors(e)
        summary = "; ".join(f"{err['field']}: {err['message']}" for err in errors)
        logger.warning(f"Invalid configuration: {summary}")
        raise ConfigurationError(
            f"invalid experiment configuration: {summary}", {"errors": errors}
        ) from e


def load_config(
    path: Path, seed: Optional[int] = None, threads: Optional[int] = None
) -> ExperimentConfig:
    """Read a YAML experiment file; unknown keys and invariant violations are errors."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist", {"path": str(path)})
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as e:
        raise ConfigurationError(f"cannot parse {path}: {e}", {"path": str(path)}) from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(
            f"{path} must contain a mapping at the top level", {"path": str(path)}
        )
    cfg = parse_config(raw, seed, threads)
    logger.info(f"Loaded configuration {path} (seed={cfg.seed})")
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """Effective configuration as YAML, every default spelled out."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True, default_flow_style=False)


def write_effective_config(cfg: ExperimentConfig, out_dir: Path) -> Path:
    path = Path(out_dir) / EFFECTIVE_CONFIG_FILE
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_config(cfg), encoding="utf-8")
    except OSError as e:
        raise ReportError(f"cannot write {path}: {e}", {"path": str(path)}) from e
    return path
