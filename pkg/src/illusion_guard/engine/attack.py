"""Adversarial illusion attacks.

Signed-gradient PGD that pushes ``cos(f(x + delta), e_target)`` up inside an
L-infinity ball, either directly in pixel space or through a sanitizer with
expectation over its randomness. The best iterate is returned and success is
judged on it.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from ..core.exceptions import (
    ConfigurationError,
    NumericFailureError,
    SingularGradientError,
    UndefinedScoreError,
)
from ..core.logging import get_logger
from ..core.seeding import stream_seed
from ..schemas.config import AttackConfig
from ..schemas.results import AttackRecord
from .encoder import EncoderModel, classify, encode, grad_cosine_wrt_input
from .reconstruct import Reconstructor
from .synthdata import ImageSample, LabelBank, SampleSet

logger = get_logger("attack")

FEASIBILITY_TOLERANCE = 1e-12
ADAPTIVE_KINDS = ("ae", "vae", "dm")

T = TypeVar("T")
R = TypeVar("R")
Mapper = Callable[[Callable[[T], R], Sequence[T]], List[R]]


@dataclass(frozen=True)
class AttackResult:
    """Best iterate of one attack and its trajectory."""

    delta: np.ndarray
    perturbed: np.ndarray
    best_cos: float
    cos_trajectory: np.ndarray
    loops_used: int
    success: bool
    stagnated: bool = False


def _cosine_to(enc: EncoderModel, x: np.ndarray, target: np.ndarray) -> float:
    u = encode(enc, x)
    norm = float(np.linalg.norm(u))
    if norm == 0:
        return -1.0
    return float(np.clip(u @ target / (norm * np.linalg.norm(target)), -1.0, 1.0))


def _safe_gradient(enc: EncoderModel, x: np.ndarray, target: np.ndarray) -> np.ndarray:
    try:
        return grad_cosine_wrt_input(enc, x, target)
    except SingularGradientError:
        return np.zeros_like(x)


def _project(x: np.ndarray, delta: np.ndarray, eps: float) -> np.ndarray:
    """Clip delta to the ball and x + delta to [0,1]; return the feasible delta."""
    delta = np.clip(delta, -eps, eps)
    perturbed = np.clip(x + delta, 0.0, 1.0)
    delta = perturbed - x
    if np.max(np.abs(delta), initial=0.0) > eps + FEASIBILITY_TOLERANCE:
        raise NumericFailureError(
            "attack iterate left the L-infinity ball",
            {"linf": float(np.max(np.abs(delta))), "budget": eps},
        )
    return delta


def _run_pgd(
    x: np.ndarray,
    cfg: AttackConfig,
    iterations: int,
    gradient,
    objective,
    deterministic: bool,
    stop: Optional[Callable[[np.ndarray], bool]] = None,
) -> AttackResult:
    eps, alpha = cfg.linf_budget, cfg.alpha
    delta = np.zeros_like(x)
    best_delta = delta
    best_cos = -np.inf
    trajectory: List[float] = []
    zero_run = 0
    stagnated = False
    loops = 0

    for iteration in range(1, iterations + 1):
        step = np.sign(gradient(x + delta, iteration))
        zero_run = 0 if np.any(step) else zero_run + 1
        new_delta = _project(x, delta + alpha * step, eps)
        value = objective(x + new_delta, iteration)
        trajectory.append(value)
        if value > best_cos:
            best_cos, best_delta = value, new_delta
        fixed_point = np.array_equal(new_delta, delta)
        delta = new_delta
        loops = iteration
        if best_cos >= cfg.cos_threshold:
            break
        if stop is not None and stop(x + new_delta):
            break
        # a deterministic zero step repeats until the window fills
        if zero_run >= cfg.stagnation_window or (deterministic and fixed_point and zero_run):
            stagnated = True
            logger.warning(f"Attack stagnated: zero gradient at iteration {iteration}")
            break
        if deterministic and fixed_point:
            break

    return AttackResult(
        delta=best_delta,
        perturbed=np.clip(x + best_delta, 0.0, 1.0),
        best_cos=float(best_cos),
        cos_trajectory=np.asarray(trajectory),
        loops_used=loops,
        success=bool(best_cos >= cfg.cos_threshold),
        stagnated=stagnated,
    )


def pgd_illusion(
    x: np.ndarray,
    y_target: int,
    enc: EncoderModel,
    bank: LabelBank,
    cfg: AttackConfig,
    max_iters: Optional[int] = None,
) -> AttackResult:
    """Pixel-space illusion toward the label embedding of ``y_target``."""
    target = bank.embedding(y_target)
    return _run_pgd(
        x,
        cfg,
        max_iters or cfg.max_iters,
        gradient=lambda point, _: _safe_gradient(enc, point, target),
        objective=lambda point, _: _cosine_to(enc, point, target),
        deterministic=True,
    )


def cosine_at_first_flip(
    x: np.ndarray,
    y_target: int,
    enc: EncoderModel,
    bank: LabelBank,
    cfg: AttackConfig,
    max_iters: Optional[int] = None,
) -> Optional[float]:
    """Target cosine at the first undefended step whose Top-1 is the target.

    Returns None when the prediction never flips within the budget. The
    distribution of these values is what the success threshold is read from.
    """
    target = bank.embedding(y_target)
    flips: List[float] = []

    def flipped(point: np.ndarray) -> bool:
        try:
            hit = classify(enc, bank, point).top1 == y_target
        except UndefinedScoreError:
            return False
        if hit:
            flips.append(_cosine_to(enc, point, target))
        return hit

    if flipped(x):
        return flips[0]
    _run_pgd(
        x,
        cfg.model_copy(update={"cos_threshold": 1.0}),
        max_iters or cfg.max_iters,
        gradient=lambda point, _: _safe_gradient(enc, point, target),
        objective=lambda point, _: _cosine_to(enc, point, target),
        deterministic=True,
        stop=flipped,
    )
    return flips[0] if flips else None


def adaptive_pgd(
    x: np.ndarray,
    y_target: int,
    enc: EncoderModel,
    bank: LabelBank,
    recon: Reconstructor,
    cfg: AttackConfig,
    stream_id: int = 0,
    max_iters: Optional[int] = None,
) -> AttackResult:
    """Illusion through the sanitizer, averaging gradients over fresh draws (EOT)."""
    if recon.kind not in ADAPTIVE_KINDS:
        raise ConfigurationError(
            f"adaptive attacks need a generative sanitizer, got kind '{recon.kind}'",
            {"sanitizer": recon.name},
        )
    target = bank.embedding(y_target)
    draws = cfg.eot_samples if recon.is_stochastic else 1

    def seeds(tag: str, iteration: int) -> List[int]:
        return [
            stream_seed(cfg.seed, f"{tag}:{recon.name}", stream_id, iteration, draw)
            for draw in range(draws)
        ]

    def gradient(point: np.ndarray, iteration: int) -> np.ndarray:
        batch = recon.reconstruct_many(point, seeds("eot", iteration))
        total = np.zeros_like(point)
        for x_hat, seed in zip(batch.outputs, batch.draw_seeds):
            total += recon.vjp(
                point, _safe_gradient(enc, x_hat, target), seed, mode=cfg.dm_gradient_mode
            )
        return total / draws

    def objective(point: np.ndarray, iteration: int) -> float:
        batch = recon.reconstruct_many(point, seeds("eot_eval", iteration))
        return float(np.mean([_cosine_to(enc, x_hat, target) for x_hat in batch.outputs]))

    return _run_pgd(
        x,
        cfg,
        max_iters or cfg.max_iters,
        gradient=gradient,
        objective=objective,
        deterministic=not recon.is_stochastic,
    )


def attack_cost_record(
    sample_id: int,
    target: int,
    result: AttackResult,
    cfg: AttackConfig,
    defended: bool,
) -> AttackRecord:
    """Failed attacks are charged the full loop budget."""
    return AttackRecord(
        sample_id=sample_id,
        target_label=target,
        loops_used=result.loops_used if result.success else cfg.loop_budget,
        final_cos=result.best_cos,
        success=result.success,
        defended=defended,
        stagnated=result.stagnated,
    )


def _serial_map(fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
    return [fn(item) for item in items]


def measure_attack_cost(
    samples: SampleSet,
    targets: Sequence[int],
    enc: EncoderModel,
    bank: LabelBank,
    recon: Optional[Reconstructor],
    cfg: AttackConfig,
    mapper: Mapper = _serial_map,
) -> List[AttackRecord]:
    """Loops needed to reach the cosine threshold, one record per sample.

    Runs the pixel-space attack when ``recon`` is None and the adaptive one
    through it otherwise. ``mapper`` applies the per-sample attack over
    (sample, target) pairs and must return results in input order.
    """

    def attack(pair: Tuple[ImageSample, int]) -> AttackRecord:
        sample, target = pair
        if recon is None:
            result = pgd_illusion(sample.pixels, target, enc, bank, cfg, cfg.loop_budget)
        else:
            result = adaptive_pgd(
                sample.pixels, target, enc, bank, recon, cfg, sample.sample_id, cfg.loop_budget
            )
        return attack_cost_record(sample.sample_id, target, result, cfg, recon is not None)

    return mapper(attack, list(zip(samples, targets)))
