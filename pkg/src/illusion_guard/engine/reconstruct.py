"""Generative sanitizers: PCA autoencoder, stochastic-latent VAE, diffusion purifier.

Each sanitizer maps [0,1]^n into [0,1]^n, clipping only at its final output,
and exposes ``vjp`` (transpose Jacobian times a vector) so adaptive attacks
can differentiate through it. Clipping is treated as the identity there.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence

import numpy as np
from scipy import linalg

from ..core.exceptions import ConfigurationError, NumericFailureError
from ..core.logging import get_logger
from ..schemas.config import AeSpec, DmSpec, TransformSpec, VaeSpec
from .synthdata import MixtureModel, mixture_score, mixture_score_vjp

logger = get_logger("reconstruct")

GradientMode = Literal["exact_jacobian", "straight_through"]


@dataclass(frozen=True)
class PcaBasis:
    """Mean and orthonormal top-k principal directions (columns)."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    total_variance: float

    @property
    def rank(self) -> int:
        return int(self.components.shape[1])

    @property
    def captured_variance_fraction(self) -> float:
        if self.total_variance <= 0:
            return 1.0
        return float(np.sum(self.explained_variance) / self.total_variance)


def fit_pca(pixels: np.ndarray, rank: int) -> PcaBasis:
    """Top-``rank`` eigenvectors of the sample covariance.

    Each column is signed so its first non-negligible component is positive.
    """
    count, n = pixels.shape
    if rank > min(n, count):
        raise ConfigurationError(
            f"PCA rank {rank} exceeds min(pixels, samples) = {min(n, count)}",
            {"rank": rank, "pixels": n, "samples": count},
        )
    mean = pixels.mean(axis=0)
    centered = pixels - mean
    covariance = centered.T @ centered / max(count - 1, 1)
    eigenvalues, eigenvectors = linalg.eigh(covariance)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    eigenvectors = eigenvectors[:, order]

    tolerance = (eigenvalues[0] if eigenvalues.size else 0.0) * n * np.finfo(float).eps
    effective_rank = int(np.sum(eigenvalues > tolerance))
    if rank > effective_rank:
        logger.warning(
            f"PCA rank {rank} exceeds the numerical rank of the data ({effective_rank}); "
            "trailing components span noise-free directions"
        )

    components = eigenvectors[:, :rank].copy()
    for column in range(rank):
        significant = np.flatnonzero(np.abs(components[:, column]) > 1e-12)
        if significant.size and components[significant[0], column] < 0:
            components[:, column] *= -1.0

    basis = PcaBasis(
        mean=mean,
        components=components,
        explained_variance=eigenvalues[:rank].copy(),
        total_variance=float(np.sum(eigenvalues)),
    )
    logger.info(
        f"Fitted PCA basis: rank={rank}, "
        f"captured variance={basis.captured_variance_fraction:.4f}"
    )
    return basis


@dataclass(frozen=True)
class ReconBatch:
    """Several reconstructions of one input."""

    inputs: np.ndarray
    outputs: np.ndarray
    draw_seeds: tuple

    def __len__(self) -> int:
        return int(self.outputs.shape[0])


class Reconstructor(ABC):
    """Abstract sanitizer G_theta(x, draw_seed)."""

    kind: str = ""

    def __init__(self, name: str) -> None:
        self.name = name

    @property
    def is_stochastic(self) -> bool:
        return True

    @abstractmethod
    def reconstruct(self, x: np.ndarray, draw_seed: int) -> np.ndarray:
        """Sanitized version of ``x`` for one draw."""

    def vjp(
        self,
        x: np.ndarray,
        g: np.ndarray,
        draw_seed: int,
        mode: GradientMode = "straight_through",
    ) -> np.ndarray:
        """Transpose Jacobian of the sanitizer at ``x`` applied to ``g``."""
        return g

    def reconstruct_many(self, x: np.ndarray, draw_seeds: Sequence[int]) -> ReconBatch:
        outputs = np.vstack([self.reconstruct(x, seed) for seed in draw_seeds])
        return ReconBatch(inputs=x, outputs=outputs, draw_seeds=tuple(draw_seeds))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r})"


class AutoencoderReconstructor(Reconstructor):
    """Deterministic projection onto the PCA manifold."""

    kind = "ae"

    def __init__(self, basis: PcaBasis, name: str = "ae") -> None:
        super().__init__(name)
        self.basis = basis

    @property
    def is_stochastic(self) -> bool:
        return False

    def encode_latent(self, x: np.ndarray) -> np.ndarray:
        return self.basis.components.T @ (x - self.basis.mean)

    def decode_latent(self, z: np.ndarray) -> np.ndarray:
        return np.clip(self.basis.mean + self.basis.components @ z, 0.0, 1.0)

    def reconstruct(self, x: np.ndarray, draw_seed: int = 0) -> np.ndarray:
        return self.decode_latent(self.encode_latent(x))

    def vjp(
        self,
        x: np.ndarray,
        g: np.ndarray,
        draw_seed: int,
        mode: GradientMode = "straight_through",
    ) -> np.ndarray:
        u = self.basis.components
        return u @ (u.T @ g)


class VariationalReconstructor(AutoencoderReconstructor):
    """PCA autoencoder with Gaussian noise of std sigma added in the latent."""

    kind = "vae"

    def __init__(self, basis: PcaBasis, latent_noise_std: float, name: str = "vae") -> None:
        super().__init__(basis, name)
        if latent_noise_std < 0:
            raise ConfigurationError("latent noise std must be non-negative")
        self.latent_noise_std = latent_noise_std

    @property
    def is_stochastic(self) -> bool:
        return self.latent_noise_std > 0

    def with_noise(self, latent_noise_std: float) -> "VariationalReconstructor":
        return VariationalReconstructor(self.basis, latent_noise_std, self.name)

    def reconstruct(self, x: np.ndarray, draw_seed: int = 0) -> np.ndarray:
        z = self.encode_latent(x)
        if self.latent_noise_std > 0:
            xi = np.random.default_rng(draw_seed).standard_normal(z.shape[0])
            z = z + self.latent_noise_std * xi
        return self.decode_latent(z)


class DiffusionPurifier(Reconstructor):
    """Forward-noise to level tau, then integrate the reverse flow with the exact score."""

    kind = "dm"

    def __init__(
        self,
        mixture: MixtureModel,
        noise_level: float,
        reverse_steps: int,
        stochastic: bool = False,
        name: str = "dm",
    ) -> None:
        super().__init__(name)
        if not 0 < noise_level <= 1:
            raise ConfigurationError("noise level must lie in (0, 1]")
        if reverse_steps < 1:
            raise ConfigurationError("at least one reverse step is required")
        self.mixture = mixture
        self.noise_level = noise_level
        self.reverse_steps = reverse_steps
        self.stochastic = stochastic

    @property
    def schedule(self) -> np.ndarray:
        """alpha_bar at the start of each step, plus the final value 1."""
        steps = np.arange(self.reverse_steps + 1) / self.reverse_steps
        return (1.0 - self.noise_level) + self.noise_level * steps

    def _trajectory(
        self,
        x: np.ndarray,
        draw_seeds: Sequence[int],
        mixture: Optional[MixtureModel] = None,
    ) -> List[np.ndarray]:
        """States of the reverse flow, one row per draw seed."""
        mixture = mixture or self.mixture
        rngs = [np.random.default_rng(seed) for seed in draw_seeds]
        n = x.shape[-1]

        def noise() -> np.ndarray:
            return np.vstack([rng.standard_normal(n) for rng in rngs])

        state = np.sqrt(1.0 - self.noise_level) * x + np.sqrt(self.noise_level) * noise()
        states = [state]
        schedule = self.schedule
        for step in range(self.reverse_steps):
            alpha_bar = float(schedule[step])
            delta = float(schedule[step + 1] - schedule[step])
            coefficient = delta / (2.0 * max(alpha_bar, np.finfo(float).eps))
            score = mixture_score(mixture, state, alpha_bar)
            if self.stochastic:
                state = (
                    state
                    + coefficient * state
                    + 2.0 * coefficient * score
                    + np.sqrt(2.0 * coefficient) * noise()
                )
            else:
                state = state + coefficient * (state + score)
            if not np.all(np.isfinite(state)):
                raise NumericFailureError(
                    "diffusion purifier produced non-finite values",
                    {"step": step, "alpha_bar": alpha_bar, "draw_seeds": list(draw_seeds)},
                )
            states.append(state)
        return states

    def purify(
        self, x: np.ndarray, draw_seed: int, mixture: Optional[MixtureModel] = None
    ) -> np.ndarray:
        return np.clip(self._trajectory(x, [draw_seed], mixture)[-1][0], 0.0, 1.0)

    def reconstruct(self, x: np.ndarray, draw_seed: int) -> np.ndarray:
        return self.purify(x, draw_seed)

    def reconstruct_many(self, x: np.ndarray, draw_seeds: Sequence[int]) -> ReconBatch:
        """All draws integrated together as one batch."""
        outputs = np.clip(self._trajectory(x, draw_seeds)[-1], 0.0, 1.0)
        return ReconBatch(inputs=x, outputs=outputs, draw_seeds=tuple(draw_seeds))

    def vjp(
        self,
        x: np.ndarray,
        g: np.ndarray,
        draw_seed: int,
        mode: GradientMode = "straight_through",
    ) -> np.ndarray:
        if mode == "straight_through":
            return g
        states = [state[0] for state in self._trajectory(x, [draw_seed])]
        schedule = self.schedule
        for step in reversed(range(self.reverse_steps)):
            alpha_bar = float(schedule[step])
            delta = float(schedule[step + 1] - schedule[step])
            coefficient = delta / (2.0 * max(alpha_bar, np.finfo(float).eps))
            score_factor = 2.0 * coefficient if self.stochastic else coefficient
            jg = mixture_score_vjp(self.mixture, states[step], alpha_bar, g)
            g = (1.0 + coefficient) * g + score_factor * jg
        return np.sqrt(1.0 - self.noise_level) * g


def ae_reconstruct(r: AutoencoderReconstructor, x: np.ndarray) -> np.ndarray:
    """Deterministic manifold projection."""
    return r.reconstruct(x, 0)


def vae_reconstruct(r: VariationalReconstructor, x: np.ndarray, draw_seed: int) -> np.ndarray:
    """One stochastic-latent reconstruction."""
    return r.reconstruct(x, draw_seed)


def dm_purify(
    r: DiffusionPurifier, m: MixtureModel, x: np.ndarray, draw_seed: int
) -> np.ndarray:
    """One diffusion purification under mixture ``m``."""
    return r.purify(x, draw_seed, mixture=m)


def build_reconstructor(
    name: str,
    spec: AeSpec | VaeSpec | DmSpec | TransformSpec,
    basis: PcaBasis,
    mixture: MixtureModel,
    grid_shape: tuple,
) -> Reconstructor:
    """Instantiate a roster entry."""
    if isinstance(spec, AeSpec):
        return AutoencoderReconstructor(basis, name=name)
    if isinstance(spec, VaeSpec):
        return VariationalReconstructor(basis, spec.latent_noise_std, name=name)
    if isinstance(spec, DmSpec):
        return DiffusionPurifier(
            mixture, spec.noise_level, spec.reverse_steps, spec.stochastic, name=name
        )
    from .transforms import PixelTransform

    return PixelTransform(spec, grid_shape, name=name)
