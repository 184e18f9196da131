"""Base schema class shared by config and result models."""

from pydantic import BaseModel, ConfigDict


class BaseSchema(BaseModel):
    """Frozen model that rejects unknown keys."""

    model_config = ConfigDict(
        str_strip_whitespace=True,
        validate_assignment=True,
        extra="forbid",
        frozen=True,
    )
