"""Shared-embedding encoder, cosine classifier head and downstream decoder."""

from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np
from scipy import linalg

from ..core.exceptions import (
    DivergenceError,
    RankDeficiencyError,
    SingularGradientError,
    UndefinedScoreError,
)
from ..core.logging import get_logger
from ..core.seeding import stream_rng
from ..schemas.config import MlpHyperParams
from .synthdata import LabelBank, SampleSet

logger = get_logger("encoder")

GRADIENT_NORM_FLOOR = 1e-12
RIDGE_FLOOR = 1e-12


@dataclass(frozen=True)
class EncoderModel:
    """Image-to-embedding map: ``W x`` or ``W2 tanh(W1 x)``."""

    kind: Literal["linear", "mlp"]
    weights: Tuple[np.ndarray, ...]
    ridge: float = 0.0
    loss_history: Tuple[float, ...] = ()

    @classmethod
    def linear(cls, w: np.ndarray, ridge: float = 0.0) -> "EncoderModel":
        return cls(kind="linear", weights=(np.asarray(w, dtype=float),), ridge=ridge)

    @classmethod
    def mlp(
        cls, w1: np.ndarray, w2: np.ndarray, loss_history: Tuple[float, ...] = ()
    ) -> "EncoderModel":
        return cls(
            kind="mlp",
            weights=(np.asarray(w1, dtype=float), np.asarray(w2, dtype=float)),
            loss_history=loss_history,
        )

    @property
    def embed_dim(self) -> int:
        return int(self.weights[-1].shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[1])

    def scaled(self, factor: float) -> "EncoderModel":
        """Same encoder with its output multiplied by ``factor``."""
        scaled = (*self.weights[:-1], self.weights[-1] * factor)
        return EncoderModel(self.kind, scaled, self.ridge, self.loss_history)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return x @ self.weights[0].T
        w1, w2 = self.weights
        return np.tanh(x @ w1.T) @ w2.T

    def vjp(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Transpose input Jacobian of the encoder at ``x`` applied to ``g``."""
        if self.kind == "linear":
            return self.weights[0].T @ g
        w1, w2 = self.weights
        hidden = np.tanh(w1 @ x)
        return w1.T @ ((1.0 - hidden * hidden) * (w2.T @ g))


@dataclass(frozen=True)
class ScoreVector:
    """Per-class cosine scores with a deterministic ranking.

    The default ranking sorts by descending score, lowest index first among
    ties. Consensus decisions supply their own ranking.
    """

    scores: np.ndarray
    order: Optional[np.ndarray] = None

    @property
    def ranking(self) -> np.ndarray:
        if self.order is not None:
            return self.order
        return np.argsort(-self.scores, kind="stable")

    @property
    def top1(self) -> int:
        return int(self.ranking[0])

    def __getitem__(self, label: int) -> float:
        return float(self.scores[label])


@dataclass(frozen=True)
class DownstreamDecoder:
    """Ridge map from embeddings back to pixels: ``clip01(D e + bias)``."""

    matrix: np.ndarray
    bias: np.ndarray
    ridge: float
    fit_mse: float = field(default=0.0)


def default_ridge(gram: np.ndarray, dim: int) -> float:
    """Scale-aware ridge: 1e-6 * trace(gram) / dim, floored for an all-zero gram."""
    return max(1e-6 * float(np.trace(gram)) / dim, RIDGE_FLOOR)


def _solve_normal(gram: np.ndarray, rhs: np.ndarray, what: str, ridge: float) -> np.ndarray:
    size = gram.shape[0]
    system = gram + ridge * np.eye(size)
    rank = int(np.linalg.matrix_rank(system))
    if rank < size:
        raise RankDeficiencyError(what, rank, size)
    try:
        return linalg.solve(system, rhs, assume_a="sym")
    except (linalg.LinAlgError, ValueError) as e:
        raise RankDeficiencyError(what, rank, size) from e


def fit_encoder_linear(
    prototypes: np.ndarray, bank: LabelBank, ridge: Optional[float] = None
) -> EncoderModel:
    """Ridge-align prototypes to their label embeddings.

    Solved in the C x C dual form ``W = E (P^T P + lam I)^-1 P^T``, the
    minimum-norm exact fit when ``lam == 0``.
    """
    p = np.asarray(prototypes, dtype=float).T
    e = bank.embeddings[: p.shape[1]].T
    gram = p.T @ p
    lam = default_ridge(gram, p.shape[0]) if ridge is None else ridge
    coefficients = _solve_normal(gram, p.T, "linear encoder", lam)
    w = e @ coefficients
    residual = float(np.max(np.linalg.norm(w @ p - e, axis=0)))
    logger.info(f"Fitted linear encoder: ridge={lam:.3g}, max alignment residual={residual:.3g}")
    return EncoderModel.linear(w, ridge=lam)


def _cosine_grad_rows(u: np.ndarray, targets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise cosine and its gradient with respect to ``u``."""
    u_norm = np.linalg.norm(u, axis=1, keepdims=True)
    t_norm = np.linalg.norm(targets, axis=1, keepdims=True)
    dots = np.sum(u * targets, axis=1, keepdims=True)
    cos = dots / (u_norm * t_norm)
    grad = targets / (u_norm * t_norm) - dots * u / (u_norm**3 * t_norm)
    return cos[:, 0], grad


def mlp_loss_and_grads(
    w1: np.ndarray, w2: np.ndarray, x: np.ndarray, targets: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean ``1 - cos(f(x), target)`` over a batch and its weight gradients."""
    hidden = np.tanh(x @ w1.T)
    u = hidden @ w2.T
    cos, grad_u = _cosine_grad_rows(u, targets)
    batch = x.shape[0]
    upstream = -grad_u / batch
    grad_w2 = upstream.T @ hidden
    grad_pre = (upstream @ w2) * (1.0 - hidden * hidden)
    grad_w1 = grad_pre.T @ x
    return float(np.mean(1.0 - cos)), grad_w1, grad_w2


def initial_mlp_weights(
    params: MlpHyperParams, input_dim: int, embed_dim: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded fan-in scaled Gaussian initialization."""
    rng = stream_rng(params.seed, "mlp_init")
    w1 = rng.standard_normal((params.hidden_dim, input_dim)) / np.sqrt(input_dim)
    w2 = rng.standard_normal((embed_dim, params.hidden_dim)) / np.sqrt(params.hidden_dim)
    return w1, w2


def fit_encoder_mlp(train: SampleSet, bank: LabelBank, params: MlpHyperParams) -> EncoderModel:
    """Mini-batch gradient descent on the mean cosine loss."""
    w1, w2 = initial_mlp_weights(params, train.pixels.shape[1], bank.embed_dim)
    targets = bank.embeddings[train.labels]
    history: List[float] = []

    for epoch in range(params.epochs):
        order = stream_rng(params.seed, "mlp_shuffle", epoch).permutation(len(train))
        losses = []
        for start in range(0, len(order), params.batch_size):
            batch = order[start : start + params.batch_size]
            loss, grad_w1, grad_w2 = mlp_loss_and_grads(
                w1, w2, train.pixels[batch], targets[batch]
            )
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"MLP encoder loss diverged at epoch {epoch}",
                    {"epoch": epoch, "loss": loss},
                )
            w1 = w1 - params.learning_rate * grad_w1
            w2 = w2 - params.learning_rate * grad_w2
            losses.append(loss * len(batch))
        history.append(float(np.sum(losses) / len(train)))
        if epoch % 50 == 0:
            logger.debug(f"MLP epoch {epoch}: loss={history[-1]:.5f}")

    logger.info(f"Fitted MLP encoder: hidden={params.hidden_dim}, final loss={history[-1]:.4f}")
    return EncoderModel.mlp(w1, w2, loss_history=tuple(history))


def encode(m: EncoderModel, x: np.ndarray) -> np.ndarray:
    """Embedding of ``x`` (not normalized)."""
    return m.forward(x)


def classify(m: EncoderModel, bank: LabelBank, x: np.ndarray) -> ScoreVector:
    """Cosine similarity of ``f(x)`` to every label embedding."""
    return classify_embedding(bank, encode(m, x))


def classify_embedding(bank: LabelBank, u: np.ndarray) -> ScoreVector:
    norm = float(np.linalg.norm(u))
    if norm == 0:
        raise UndefinedScoreError("cosine scores are undefined for a zero embedding")
    label_norms = np.linalg.norm(bank.embeddings, axis=1)
    scores = (bank.embeddings @ u) / (label_norms * norm)
    return ScoreVector(scores=np.clip(scores, -1.0, 1.0))


def grad_cosine_wrt_input(m: EncoderModel, x: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of ``cos(f(x), target)`` with respect to the pixels ``x``."""
    u = encode(m, x)
    u_norm = float(np.linalg.norm(u))
    t_norm = float(np.linalg.norm(target))
    if u_norm < GRADIENT_NORM_FLOOR or t_norm == 0:
        raise SingularGradientError(
            "cosine gradient is singular at a zero embedding",
            {"embedding_norm": u_norm, "target_norm": t_norm},
        )
    grad_u = target / (u_norm * t_norm) - float(u @ target) * u / (u_norm**3 * t_norm)
    return m.vjp(x, grad_u)


def fit_downstream_decoder(
    m: EncoderModel, train: SampleSet, ridge: Optional[float] = None
) -> DownstreamDecoder:
    """Ridge least squares from training embeddings back to their pixels."""
    z = encode(m, train.pixels)
    z_mean = z.mean(axis=0)
    x_mean = train.pixels.mean(axis=0)
    zc = z - z_mean
    xc = train.pixels - x_mean
    gram = zc.T @ zc
    lam = default_ridge(gram, gram.shape[0]) if ridge is None else ridge
    matrix = _solve_normal(gram, zc.T @ xc, "downstream decoder", lam).T
    bias = x_mean - matrix @ z_mean
    fit_mse = float(np.mean((z @ matrix.T + bias - train.pixels) ** 2))
    logger.info(f"Fitted downstream decoder: ridge={lam:.3g}, fit mse={fit_mse:.4g}")
    return DownstreamDecoder(matrix=matrix, bias=bias, ridge=lam, fit_mse=fit_mse)


def decode_embedding(dec: DownstreamDecoder, e: np.ndarray) -> np.ndarray:
    """Pixels reconstructed from an embedding."""
    return np.clip(dec.matrix @ e + dec.bias, 0.0, 1.0)
