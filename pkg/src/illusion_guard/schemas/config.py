"""Experiment configuration schemas using Pydantic V2."""

import hashlib
import json
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import Field, field_validator, model_validator

from .base import BaseSchema

DEFAULT_SEED = 7

ExperimentName = Literal["grid", "baselines", "sweep", "attack_cost", "transfer"]
ALL_EXPERIMENTS: Tuple[ExperimentName, ...] = (
    "grid",
    "baselines",
    "sweep",
    "attack_cost",
    "transfer",
)

TransformName = Literal["identity", "dct_quantize", "gaussian_blur", "translate", "hflip", "jitter"]


class DataConfig(BaseSchema):
    """Synthetic dataset parameters."""

    num_classes: int = Field(20, ge=2, description="Number of classes C")
    height: int = Field(16, ge=1, description="Grid height H")
    width: int = Field(16, ge=1, description="Grid width W")
    embed_dim: int = Field(64, ge=1, description="Shared embedding dimension d")
    pixel_noise_std: float = Field(0.05, ge=0.0, description="Per-pixel noise std s")
    train_per_class: int = Field(50, ge=1)
    eval_per_class: int = Field(5, ge=1)
    prototype_smoothing_std: float = Field(2.0, ge=0.0, description="Smoothing std in pixels")
    master_seed: int = Field(DEFAULT_SEED, ge=0, lt=2**64)

    @property
    def num_pixels(self) -> int:
        return self.height * self.width

    @model_validator(mode="after")
    def validate_dimensions(self) -> "DataConfig":
        """The embedding cannot be wider than the image."""
        if self.num_pixels < self.embed_dim:
            raise ValueError(
                f"embed_dim ({self.embed_dim}) must not exceed height*width ({self.num_pixels})"
            )
        return self


class MlpHyperParams(BaseSchema):
    """Training hyperparameters for the tanh MLP encoder."""

    hidden_dim: int = Field(128, ge=1)
    learning_rate: float = Field(0.05, ge=0.0)
    epochs: int = Field(200, ge=1)
    batch_size: int = Field(64, ge=1)
    seed: int = Field(0, ge=0)


class EncoderSettings(BaseSchema):
    """Which encoder attacks and defenses run against, and its fit parameters."""

    kind: Literal["linear", "mlp"] = "linear"
    ridge: Optional[float] = Field(None, ge=0.0, description="None selects the scale-aware default")
    decoder_ridge: Optional[float] = Field(None, ge=0.0)
    mlp: MlpHyperParams = Field(default_factory=MlpHyperParams)


class AeSpec(BaseSchema):
    """Deterministic PCA autoencoder."""

    kind: Literal["ae"] = "ae"


class VaeSpec(BaseSchema):
    """PCA autoencoder with Gaussian latent sampling."""

    kind: Literal["vae"] = "vae"
    latent_noise_std: float = Field(0.15, ge=0.0, description="Latent noise std sigma")


class DmSpec(BaseSchema):
    """Exact-score diffusion purifier."""

    kind: Literal["dm"] = "dm"
    noise_level: float = Field(0.3, gt=0.0, le=1.0, description="Forward noise level tau")
    reverse_steps: int = Field(30, ge=1, description="Number of reverse steps K")
    stochastic: bool = False


class TransformSpec(BaseSchema):
    """Pixel-space preprocessing baseline."""

    kind: Literal["transform"] = "transform"
    name: TransformName
    levels: int = Field(16, ge=2, description="dct_quantize steps per unit pixel range")
    keep_fraction: float = Field(0.25, gt=0.0, le=1.0)
    blur_sigma: float = Field(1.0, ge=0.0)
    max_shift: int = Field(2, ge=0)
    contrast: Tuple[float, float] = (0.7, 1.3)
    brightness: Tuple[float, float] = (-0.15, 0.15)

    @field_validator("contrast", "brightness")
    @classmethod
    def validate_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        """Ranges are given as (low, high)."""
        low, high = value
        if low > high:
            raise ValueError(f"range low {low} exceeds high {high}")
        return value


ReconstructorSpec = Annotated[
    Union[AeSpec, VaeSpec, DmSpec, TransformSpec], Field(discriminator="kind")
]


def default_roster() -> Dict[str, Any]:
    """Generative sanitizers and the pixel-transform baselines."""
    return {
        "ae": AeSpec(),
        "vae": VaeSpec(),
        "dm": DmSpec(),
        "jpeg": TransformSpec(name="dct_quantize"),
        "blur": TransformSpec(name="gaussian_blur"),
        "affine": TransformSpec(name="translate"),
        "jitter": TransformSpec(name="jitter"),
        "hflip": TransformSpec(name="hflip"),
    }


class AttackConfig(BaseSchema):
    """PGD illusion and attack-cost parameters."""

    linf_budget: float = Field(0.1, ge=0.0, description="L-infinity budget epsilon")
    step_size: Optional[float] = Field(None, gt=0.0, description="None selects epsilon / 10")
    max_iters: int = Field(3000, ge=1)
    eot_samples: int = Field(8, ge=1, description="EOT draws per adaptive iteration")
    dm_gradient_mode: Literal["exact_jacobian", "straight_through"] = "straight_through"
    cos_threshold: float = Field(0.8, ge=-1.0, le=1.0)
    loop_budget: int = Field(3000, ge=1)
    stagnation_window: int = Field(50, ge=1)
    seed: int = Field(DEFAULT_SEED, ge=0, lt=2**64)

    @property
    def alpha(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return self.linf_budget / 10.0


class ConsensusConfig(BaseSchema):
    """Generative sampling with majority aggregation."""

    num_samples: int = Field(10, ge=1, description="Reconstructions per input N")
    tie_rule: Literal["mean_cosine_then_lowest_index"] = "mean_cosine_then_lowest_index"
    sampling_sanitizers: List[str] = Field(default_factory=lambda: ["dm", "vae"])
    seed: int = Field(DEFAULT_SEED, ge=0, lt=2**64)


class SweepSettings(BaseSchema):
    """Sampling-size sweep."""

    n_values: List[int] = Field(default_factory=lambda: list(range(1, 21)), min_length=1)
    sanitizers: List[str] = Field(default_factory=lambda: ["dm", "vae"], min_length=1)

    @field_validator("n_values")
    @classmethod
    def validate_n_values(cls, value: List[int]) -> List[int]:
        """Sample counts are positive and reported in ascending order."""
        if any(n < 1 for n in value):
            raise ValueError("every sample count must be at least 1")
        return sorted(set(value))


class AttackCostSettings(BaseSchema):
    """Defended arm and histogram layout of the attack-cost experiment."""

    sanitizer: str = "dm"
    loop_bins: int = Field(30, ge=1)
    cos_bins: int = Field(40, ge=1)


class CalibrationSettings(BaseSchema):
    """Latent-noise calibration for the VAE sanitizer."""

    enabled: bool = False
    sanitizer: str = "vae"
    sigma_candidates: List[float] = Field(
        default_factory=lambda: [0.05, 0.1, 0.15, 0.2, 0.3], min_length=1
    )
    max_clean_drop: float = Field(0.02, ge=0.0, le=1.0)
    trials_per_sample: int = Field(10, ge=1)


class TransferSettings(BaseSchema):
    """Cross-encoder transfer experiment."""

    sanitizer: str = "dm"


class ExperimentConfig(BaseSchema):
    """Everything one run of the testbed needs."""

    seed: int = Field(DEFAULT_SEED, ge=0, lt=2**64)
    data: DataConfig = Field(default_factory=DataConfig)
    encoder: EncoderSettings = Field(default_factory=EncoderSettings)
    pca_rank: int = Field(24, ge=1)
    reconstructors: Dict[str, ReconstructorSpec] = Field(default_factory=default_roster)
    baselines: List[str] = Field(
        default_factory=lambda: ["jpeg", "blur", "affine", "jitter", "hflip"]
    )
    attack: AttackConfig = Field(default_factory=AttackConfig)
    consensus: ConsensusConfig = Field(default_factory=ConsensusConfig)
    sweep: SweepSettings = Field(default_factory=SweepSettings)
    attack_cost: AttackCostSettings = Field(default_factory=AttackCostSettings)
    calibration: CalibrationSettings = Field(default_factory=CalibrationSettings)
    transfer: TransferSettings = Field(default_factory=TransferSettings)
    experiments: List[ExperimentName] = Field(default_factory=lambda: list(ALL_EXPERIMENTS))
    eval_limit: Optional[int] = Field(None, ge=1, description="Use only the first eval images")
    output_dir: Optional[Path] = None
    threads: int = Field(1, ge=1, le=64)

    @model_validator(mode="before")
    @classmethod
    def propagate_seed(cls, data: Any) -> Any:
        """Sub-configs without their own seed inherit the top-level one."""
        if not isinstance(data, dict) or "seed" not in data:
            return data
        data = dict(data)
        for section, key in (("data", "master_seed"), ("attack", "seed"), ("consensus", "seed")):
            block = data.get(section)
            if block is None:
                data[section] = {key: data["seed"]}
            elif isinstance(block, dict) and key not in block:
                data[section] = {**block, key: data["seed"]}
        return data

    @model_validator(mode="after")
    def validate_references(self) -> "ExperimentConfig":
        """Every roster name referenced elsewhere must exist with a fitting kind."""
        kinds = {name: spec.kind for name, spec in self.reconstructors.items()}

        def require(field: str, name: str, allowed: Tuple[str, ...]) -> None:
            if name not in kinds:
                raise ValueError(f"{field}: unknown reconstructor '{name}'")
            if kinds[name] not in allowed:
                raise ValueError(
                    f"{field}: reconstructor '{name}' has kind '{kinds[name]}', "
                    f"expected one of {', '.join(allowed)}"
                )

        for name in self.consensus.sampling_sanitizers:
            require("consensus.sampling_sanitizers", name, ("vae", "dm"))
        for name in self.sweep.sanitizers:
            require("sweep.sanitizers", name, ("vae", "dm"))
        for name in self.baselines:
            require("baselines", name, ("transform",))
        require("attack_cost.sanitizer", self.attack_cost.sanitizer, ("ae", "vae", "dm"))
        require("transfer.sanitizer", self.transfer.sanitizer, ("ae", "vae", "dm"))
        require("calibration.sanitizer", self.calibration.sanitizer, ("vae",))
        if self.pca_rank > self.data.num_pixels:
            raise ValueError(
                f"pca_rank ({self.pca_rank}) exceeds the pixel count ({self.data.num_pixels})"
            )
        return self

    def hash_payload(self) -> Dict[str, Any]:
        """Effective parameters that determine results (no paths, no thread count)."""
        return self.model_dump(mode="json", exclude={"output_dir", "threads"})


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 over the canonical JSON of the result-determining parameters."""
    canonical = json.dumps(cfg.hash_payload(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
