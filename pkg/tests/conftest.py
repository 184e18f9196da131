import sys
from pathlib import Path

import numpy as np
import pytest

root = Path(__file__).resolve().parents[1]
src = root / "src"
if str(src) not in sys.path:
    sys.path.insert(0, str(src))

from illusion_guard.engine.encoder import EncoderModel, fit_encoder_linear  # noqa: E402
from illusion_guard.engine.reconstruct import PcaBasis, fit_pca  # noqa: E402
from illusion_guard.engine.synthdata import (  # noqa: E402
    LabelBank,
    SyntheticDataset,
    generate_dataset,
)
from illusion_guard.schemas.config import DataConfig, ExperimentConfig  # noqa: E402
from illusion_guard.services.experiment_service import ExperimentService  # noqa: E402

TINY_DATA = {
    "num_classes": 4,
    "height": 8,
    "width": 8,
    "embed_dim": 8,
    "train_per_class": 10,
    "eval_per_class": 2,
    "prototype_smoothing_std": 1.0,
}


def tiny_experiment(**overrides) -> dict:
    """Raw experiment mapping small enough to run every protocol in seconds."""
    raw = {
        "seed": 11,
        "data": dict(TINY_DATA),
        "encoder": {"mlp": {"hidden_dim": 16, "epochs": 20, "batch_size": 16}},
        "pca_rank": 6,
        "reconstructors": {
            "ae": {"kind": "ae"},
            "vae": {"kind": "vae", "latent_noise_std": 0.15},
            "dm": {"kind": "dm", "noise_level": 0.3, "reverse_steps": 5},
            "jpeg": {"kind": "transform", "name": "dct_quantize"},
            "blur": {"kind": "transform", "name": "gaussian_blur"},
            "affine": {"kind": "transform", "name": "translate", "max_shift": 1},
            "jitter": {"kind": "transform", "name": "jitter"},
            "hflip": {"kind": "transform", "name": "hflip"},
        },
        "attack": {
            "linf_budget": 0.1,
            "max_iters": 40,
            "loop_budget": 40,
            "eot_samples": 2,
        },
        "consensus": {"num_samples": 5},
        "sweep": {"n_values": [1, 2, 3]},
        "attack_cost": {"loop_bins": 5, "cos_bins": 8},
        "calibration": {"trials_per_sample": 3},
    }
    raw.update(overrides)
    return raw


@pytest.fixture(scope="session")
def data_config() -> DataConfig:
    return DataConfig(master_seed=11, **TINY_DATA)


@pytest.fixture(scope="session")
def dataset(data_config) -> SyntheticDataset:
    return generate_dataset(data_config)


@pytest.fixture(scope="session")
def linear_encoder(dataset) -> EncoderModel:
    return fit_encoder_linear(dataset.prototypes, dataset.bank)


@pytest.fixture(scope="session")
def basis(dataset) -> PcaBasis:
    return fit_pca(dataset.train.pixels, 6)


@pytest.fixture
def identity_encoder() -> EncoderModel:
    """Two-pixel encoder that returns its input."""
    return EncoderModel.linear(np.eye(2))


@pytest.fixture
def axis_bank() -> LabelBank:
    return LabelBank(embeddings=np.eye(2))


@pytest.fixture
def experiment_config() -> ExperimentConfig:
    return ExperimentConfig.model_validate(tiny_experiment())


@pytest.fixture
def make_experiment():
    """Factory for raw tiny experiment mappings with top-level overrides."""
    return tiny_experiment


@pytest.fixture(scope="session")
def tiny_run():
    """A service that ran every experiment on the tiny config, with its bundle."""
    service = ExperimentService(ExperimentConfig.model_validate(tiny_experiment()))
    return service, service.run()
