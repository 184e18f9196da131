"""Seeded synthetic multi-modal dataset.

Images of class ``y`` are ``clip01(mu_y + noise)`` around a smooth prototype
``mu_y``; each class is paired with a unit-norm label embedding ``e_y``. The
pixel distribution is an equal-weight Gaussian mixture, whose exact score the
diffusion purifier uses.
"""

from dataclasses import dataclass
from typing import Iterator, Literal

import numpy as np
from scipy import ndimage
from scipy.special import logsumexp, softmax

from ..core.exceptions import DataGenerationError, NumericFailureError
from ..core.logging import get_logger
from ..core.seeding import stream_rng
from ..schemas.config import DataConfig

logger = get_logger("synthdata")

PROTOTYPE_LOW = 0.1
PROTOTYPE_HIGH = 0.9
MAX_PAIRWISE_COHERENCE = 0.5

Split = Literal["train", "eval"]


@dataclass(frozen=True)
class ImageSample:
    """One flattened image with its label."""

    pixels: np.ndarray
    label: int
    split: Split
    sample_id: int


@dataclass(frozen=True)
class SampleSet:
    """Images of one split, stored row-wise in ``sample_id`` order."""

    pixels: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray
    split: Split

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __iter__(self) -> Iterator[ImageSample]:
        for index in range(len(self)):
            yield self.sample(index)

    def sample(self, index: int) -> ImageSample:
        return ImageSample(
            pixels=self.pixels[index],
            label=int(self.labels[index]),
            split=self.split,
            sample_id=int(self.sample_ids[index]),
        )

    def head(self, count: int) -> "SampleSet":
        return SampleSet(
            pixels=self.pixels[:count],
            labels=self.labels[:count],
            sample_ids=self.sample_ids[:count],
            split=self.split,
        )


@dataclass(frozen=True)
class LabelBank:
    """Unit-norm label embeddings, one row per class."""

    embeddings: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(self.embeddings.shape[0])

    @property
    def embed_dim(self) -> int:
        return int(self.embeddings.shape[1])

    def embedding(self, label: int) -> np.ndarray:
        return self.embeddings[label]


@dataclass(frozen=True)
class MixtureModel:
    """Equal-weight isotropic Gaussian mixture over pixel space."""

    prototypes: np.ndarray
    component_std: float

    @property
    def num_components(self) -> int:
        return int(self.prototypes.shape[0])

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.num_components, 1.0 / self.num_components)


@dataclass(frozen=True)
class SyntheticDataset:
    """Everything ``generate_dataset`` produces."""

    config: DataConfig
    prototypes: np.ndarray
    train: SampleSet
    eval: SampleSet
    bank: LabelBank
    mixture: MixtureModel


def _make_prototype(cfg: DataConfig, class_id: int) -> np.ndarray:
    rng = stream_rng(cfg.master_seed, "prototype", class_id)
    field = rng.uniform(0.0, 1.0, size=(cfg.height, cfg.width))
    if cfg.prototype_smoothing_std > 0:
        field = ndimage.gaussian_filter(field, sigma=cfg.prototype_smoothing_std, mode="reflect")
    low, high = float(field.min()), float(field.max())
    if high - low <= np.finfo(float).eps:
        compressed = np.full_like(field, 0.5 * (PROTOTYPE_LOW + PROTOTYPE_HIGH))
    else:
        compressed = PROTOTYPE_LOW + (PROTOTYPE_HIGH - PROTOTYPE_LOW) * (field - low) / (high - low)
    return np.clip(compressed.ravel(), PROTOTYPE_LOW, PROTOTYPE_HIGH)


def _make_label_bank(cfg: DataConfig) -> LabelBank:
    rng = stream_rng(cfg.master_seed, "label_bank")
    max_attempts = 10 * cfg.num_classes * cfg.num_classes
    accepted: list[np.ndarray] = []
    attempts = 0
    while len(accepted) < cfg.num_classes:
        if attempts >= max_attempts:
            raise DataGenerationError(
                f"label bank rejection exceeded {max_attempts} attempts; "
                f"embed_dim {cfg.embed_dim} is too small for {cfg.num_classes} classes",
                {"attempts": attempts, "accepted": len(accepted)},
            )
        attempts += 1
        candidate = rng.standard_normal(cfg.embed_dim)
        candidate /= np.linalg.norm(candidate)
        if all(abs(float(candidate @ other)) <= MAX_PAIRWISE_COHERENCE for other in accepted):
            accepted.append(candidate)
    logger.debug(f"Label bank accepted {len(accepted)} embeddings after {attempts} draws")
    return LabelBank(embeddings=np.vstack(accepted))


def _draw_split(
    cfg: DataConfig, prototypes: np.ndarray, per_class: int, first_id: int, split: Split
) -> SampleSet:
    count = per_class * cfg.num_classes
    labels = np.repeat(np.arange(cfg.num_classes), per_class)
    sample_ids = np.arange(first_id, first_id + count)
    pixels = np.empty((count, cfg.num_pixels))
    for row, (label, sample_id) in enumerate(zip(labels, sample_ids)):
        mean = prototypes[label]
        if cfg.pixel_noise_std == 0:
            pixels[row] = mean
            continue
        noise = stream_rng(cfg.master_seed, "sample", int(sample_id)).standard_normal(
            cfg.num_pixels
        )
        pixels[row] = np.clip(mean + cfg.pixel_noise_std * noise, 0.0, 1.0)
    return SampleSet(pixels=pixels, labels=labels, sample_ids=sample_ids, split=split)


def generate_dataset(cfg: DataConfig) -> SyntheticDataset:
    """Generate prototypes, train/eval images, label bank and mixture model."""
    prototypes = np.vstack([_make_prototype(cfg, y) for y in range(cfg.num_classes)])
    bank = _make_label_bank(cfg)
    train = _draw_split(cfg, prototypes, cfg.train_per_class, 0, "train")
    eval_set = _draw_split(cfg, prototypes, cfg.eval_per_class, len(train), "eval")
    mixture = MixtureModel(prototypes=prototypes, component_std=cfg.pixel_noise_std)
    logger.info(
        f"Generated dataset: {cfg.num_classes} classes, {len(train)} train, "
        f"{len(eval_set)} eval, n={cfg.num_pixels}, d={cfg.embed_dim}"
    )
    return SyntheticDataset(
        config=cfg,
        prototypes=prototypes,
        train=train,
        eval=eval_set,
        bank=bank,
        mixture=mixture,
    )


def _noised_variance(m: MixtureModel, alpha_bar: float) -> float:
    variance = alpha_bar * m.component_std**2 + (1.0 - alpha_bar)
    if variance <= 0:
        raise NumericFailureError(
            "noised mixture variance is zero; the score is undefined",
            {"alpha_bar": alpha_bar, "component_std": m.component_std},
        )
    return variance


def _responsibilities(m: MixtureModel, x: np.ndarray, alpha_bar: float, variance: float):
    means = np.sqrt(alpha_bar) * m.prototypes
    diffs = means[None, :, :] - np.atleast_2d(x)[:, None, :]
    logits = -np.sum(diffs * diffs, axis=-1) / (2.0 * variance)
    return softmax(logits, axis=-1), diffs, logits


def mixture_score(m: MixtureModel, x: np.ndarray, alpha_bar: float) -> np.ndarray:
    """Gradient of log p_t at ``x`` for the mixture noised to level ``alpha_bar``.

    ``x`` may be a single vector or a batch of row vectors.
    """
    variance = _noised_variance(m, alpha_bar)
    weights, diffs, _ = _responsibilities(m, x, alpha_bar, variance)
    score = np.einsum("bc,bcn->bn", weights, diffs) / variance
    return score[0] if np.ndim(x) == 1 else score


def mixture_score_vjp(
    m: MixtureModel, x: np.ndarray, alpha_bar: float, g: np.ndarray
) -> np.ndarray:
    """Product of the (symmetric) score Jacobian at ``x`` with the vector ``g``."""
    variance = _noised_variance(m, alpha_bar)
    weights, diffs, _ = _responsibilities(m, x, alpha_bar, variance)
    weights, d = weights[0], diffs[0] / variance
    score = weights @ d
    return -g / variance + d.T @ (weights * (d @ g)) - score * (score @ g)


def mixture_log_density(m: MixtureModel, x: np.ndarray, alpha_bar: float) -> float:
    """log p_t(x) for a single vector ``x``."""
    variance = _noised_variance(m, alpha_bar)
    _, _, logits = _responsibilities(m, x, alpha_bar, variance)
    n = x.shape[-1]
    return float(
        logsumexp(logits[0])
        - np.log(m.num_components)
        - 0.5 * n * np.log(2.0 * np.pi * variance)
    )
