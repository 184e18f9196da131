"""Consensus over stochastic reconstructions.

Draw N sanitized reconstructions, classify each, return the modal label.
Ties go to the tied class with the highest mean cosine across draws, then
to the lowest class index. Draw seeds are derived from the draw index, so
the decision does not depend on evaluation order.
"""

from dataclasses import dataclass, replace
from math import comb
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, logsumexp, xlog1py, xlogy
from statsmodels.stats.proportion import proportion_confint

from ..core.exceptions import ConsensusError, NumericFailureError, UndefinedScoreError
from ..core.logging import get_logger
from ..core.seeding import stream_seed
from ..schemas.config import ConsensusConfig
from .encoder import EncoderModel, ScoreVector, classify, classify_embedding, encode
from .reconstruct import Reconstructor, VariationalReconstructor
from .synthdata import LabelBank

logger = get_logger("consensus")

EXACT_SUMMATION_LIMIT = 50
CONFIDENCE_ALPHA = 0.05


@dataclass(frozen=True)
class ConsensusDecision:
    """Votes of N reconstructions and the aggregated winner."""

    votes: np.ndarray
    vote_counts: np.ndarray
    winner: int
    mean_scores: np.ndarray
    tie_broken: bool
    draw_scores: np.ndarray
    draw_embeddings: np.ndarray
    draw_seeds: Tuple[int, ...]

    @property
    def num_samples(self) -> int:
        return int(self.votes.shape[0])

    def score_vector(self) -> ScoreVector:
        """Mean cosines, ranked by (votes desc, mean cosine desc, index asc)."""
        classes = np.arange(self.vote_counts.shape[0])
        order = np.lexsort((classes, -self.mean_scores, -self.vote_counts))
        return ScoreVector(scores=self.mean_scores, order=order)

    def representative_draw(self) -> int:
        """Draw that voted for the winner with the highest cosine to it."""
        voters = np.flatnonzero(self.votes == self.winner)
        return int(voters[np.argmax(self.draw_scores[voters, self.winner])])

    def prefix(self, count: int) -> "ConsensusDecision":
        """The decision the first ``count`` draws alone would have produced."""
        return aggregate_draws(
            self.draw_scores[:count], self.draw_embeddings[:count], self.draw_seeds[:count]
        )


def majority_vote(
    votes: Sequence[int], mean_scores: np.ndarray, num_classes: int
) -> Tuple[int, np.ndarray, bool]:
    """Modal vote with the mean-cosine-then-lowest-index tie rule."""
    counts = np.bincount(np.asarray(votes, dtype=int), minlength=num_classes)
    tied = np.flatnonzero(counts == counts.max())
    if tied.size == 1:
        return int(tied[0]), counts, False
    winner = int(tied[np.argmax(mean_scores[tied])])
    return winner, counts, True


def aggregate_draws(
    draw_scores: np.ndarray, draw_embeddings: np.ndarray, draw_seeds: Sequence[int]
) -> ConsensusDecision:
    votes = np.array([ScoreVector(scores=row).top1 for row in draw_scores], dtype=int)
    mean_scores = draw_scores.mean(axis=0)
    winner, counts, tie_broken = majority_vote(votes, mean_scores, draw_scores.shape[1])
    return ConsensusDecision(
        votes=votes,
        vote_counts=counts,
        winner=winner,
        mean_scores=mean_scores,
        tie_broken=tie_broken,
        draw_scores=draw_scores,
        draw_embeddings=draw_embeddings,
        draw_seeds=tuple(int(s) for s in draw_seeds),
    )


def draw_seed(cfg: ConsensusConfig, sanitizer: Reconstructor, stream_id: int, index: int) -> int:
    return stream_seed(cfg.seed, f"draw:{sanitizer.name}", stream_id, index)


def _score_draw(
    x: np.ndarray,
    sanitizer: Reconstructor,
    enc: EncoderModel,
    bank: LabelBank,
    seed: int,
) -> Tuple[np.ndarray, np.ndarray]:
    x_hat = sanitizer.reconstruct(x, seed)
    embedding = encode(enc, x_hat)
    return classify_embedding(bank, embedding).scores, embedding


def consensus_classify(
    x: np.ndarray,
    cfg: ConsensusConfig,
    enc: EncoderModel,
    bank: LabelBank,
    sanitizer: Reconstructor,
    stream_id: int = 0,
    num_samples: Optional[int] = None,
) -> ConsensusDecision:
    """Classify N reconstructions of ``x`` and aggregate by mode."""
    count = cfg.num_samples if num_samples is None else num_samples
    scores, embeddings, seeds = [], [], []
    for index in range(count):
        seed = draw_seed(cfg, sanitizer, stream_id, index)
        try:
            row, embedding = _score_draw(x, sanitizer, enc, bank, seed)
        except (NumericFailureError, UndefinedScoreError) as first:
            retry_seed = stream_seed(cfg.seed, f"draw:{sanitizer.name}", stream_id, index, 1)
            logger.warning(
                f"Draw {index} of sample {stream_id} failed ({first.message}); "
                f"retrying with seed {retry_seed}"
            )
            try:
                row, embedding = _score_draw(x, sanitizer, enc, bank, retry_seed)
            except (NumericFailureError, UndefinedScoreError) as second:
                raise ConsensusError(
                    f"draw {index} failed twice under sanitizer {sanitizer.name}",
                    {"sample_id": stream_id, "draw_index": index, "error": second.message},
                ) from second
            seed = retry_seed
        scores.append(row)
        embeddings.append(embedding)
        seeds.append(seed)
    return aggregate_draws(np.vstack(scores), np.vstack(embeddings), seeds)


def majority_attack_probability(eta: float, n: int) -> float:
    """P(more than half of n independent draws keep the attack label)."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta={eta} must lie in [0, 1]")
    if n < 1:
        raise ValueError(f"n={n} must be at least 1")
    ks = range(n // 2 + 1, n + 1)
    if n <= EXACT_SUMMATION_LIMIT:
        return float(sum(comb(n, k) * eta**k * (1.0 - eta) ** (n - k) for k in ks))
    k = np.arange(n // 2 + 1, n + 1, dtype=float)
    log_terms = (
        gammaln(n + 1.0)
        - gammaln(k + 1.0)
        - gammaln(n - k + 1.0)
        + xlogy(k, eta)
        + xlog1py(n - k, -eta)
    )
    return float(min(1.0, np.exp(logsumexp(log_terms))))


@dataclass(frozen=True)
class EtaEstimate:
    """Pooled single-draw persistence of the attack label.

    ``per_sample`` keeps each sample's own rate; the pooled ``eta`` hides how
    unevenly the attack survives across samples.
    """

    eta: float
    std_error: float
    successes: int
    trials: int
    ci_low: float
    ci_high: float
    per_sample: Tuple[float, ...] = ()


def binomial_estimate(
    successes: int, trials: int, per_sample: Sequence[float] = ()
) -> EtaEstimate:
    rate = successes / trials
    low, high = proportion_confint(successes, trials, alpha=CONFIDENCE_ALPHA, method="beta")
    return EtaEstimate(
        eta=rate,
        std_error=float(np.sqrt(rate * (1.0 - rate) / trials)),
        successes=successes,
        trials=trials,
        ci_low=float(low),
        ci_high=float(high),
        per_sample=tuple(float(p) for p in per_sample),
    )


def calibrate_eta(
    attacked: np.ndarray,
    targets: Sequence[int],
    sanitizer: Reconstructor,
    enc: EncoderModel,
    bank: LabelBank,
    trials: int,
    seed: int = 0,
    sample_ids: Optional[Sequence[int]] = None,
) -> EtaEstimate:
    """Fraction of single reconstructions whose Top-1 is the attack target."""
    if trials < 1:
        raise ValueError("at least one trial per sample is required")
    ids = list(range(len(targets))) if sample_ids is None else list(sample_ids)
    counts = []
    for row, target, sample_id in zip(attacked, targets, ids):
        seeds = [stream_seed(seed, f"eta:{sanitizer.name}", sample_id, t) for t in range(trials)]
        batch = sanitizer.reconstruct_many(row, seeds)
        counts.append(
            int(sum(classify(enc, bank, x_hat).top1 == target for x_hat in batch.outputs))
        )
    return binomial_estimate(sum(counts), trials * len(ids), [c / trials for c in counts])


def predicted_majority_success(per_sample_eta: Sequence[float], n: int) -> Tuple[float, float]:
    """Expected consensus attack success over samples and its standard error.

    Each sample keeps its own persistence, so the prediction is the mean of
    the per-sample majority probabilities rather than the majority
    probability of the pooled rate.
    """
    if len(per_sample_eta) == 0:
        raise ValueError("at least one per-sample rate is required")
    probabilities = np.array([majority_attack_probability(eta, n) for eta in per_sample_eta])
    count = probabilities.shape[0]
    std_error = float(np.sqrt(np.sum(probabilities * (1.0 - probabilities))) / count)
    return float(probabilities.mean()), std_error


@dataclass(frozen=True)
class SigmaCandidate:
    sigma: float
    clean_top1: float
    eta_hat: float
    selected: bool = False
    eta_std_error: float = 0.0


def select_sigma(rows: Sequence[SigmaCandidate]) -> SigmaCandidate:
    """Smallest sigma whose eta is within one standard error of the least eta."""
    best = min(rows, key=lambda row: (row.eta_hat, row.sigma))
    ceiling = best.eta_hat + best.eta_std_error + 1e-12
    return min((row for row in rows if row.eta_hat <= ceiling), key=lambda row: row.sigma)


def calibrate_sigma(
    vae: VariationalReconstructor,
    candidates: Sequence[float],
    clean: np.ndarray,
    labels: Sequence[int],
    attacked: np.ndarray,
    targets: Sequence[int],
    enc: EncoderModel,
    bank: LabelBank,
    cfg: ConsensusConfig,
    trials: int,
    max_clean_drop: float,
    sample_ids: Sequence[int],
) -> Tuple[float, List[SigmaCandidate]]:
    """Latent noise keeping clean consensus Top-1 near sigma=0 with the least eta.

    Candidates whose eta is within one standard error of the minimum count
    as equal; among them the smallest sigma wins.
    """

    def clean_top1(sanitizer: VariationalReconstructor) -> float:
        hits = [
            consensus_classify(x, cfg, enc, bank, sanitizer, stream_id=sid).winner == y
            for x, y, sid in zip(clean, labels, sample_ids)
        ]
        return float(np.mean(hits))

    baseline = clean_top1(vae.with_noise(0.0))
    rows: List[SigmaCandidate] = []
    for sigma in sorted(candidates):
        sanitizer = vae.with_noise(sigma)
        estimate = calibrate_eta(
            attacked, targets, sanitizer, enc, bank, trials, cfg.seed, sample_ids
        )
        rows.append(
            SigmaCandidate(
                sigma, clean_top1(sanitizer), estimate.eta, eta_std_error=estimate.std_error
            )
        )
        logger.info(
            f"sigma={sigma:.3g}: clean consensus top1={rows[-1].clean_top1:.3f}, "
            f"eta={estimate.eta:.3f}"
        )

    feasible = [row for row in rows if row.clean_top1 >= baseline - max_clean_drop - 1e-12]
    if not feasible:
        logger.warning(
            f"No sigma keeps clean top1 within {max_clean_drop} of {baseline:.3f}; "
            "falling back to the smallest candidate"
        )
        feasible = rows[:1]
    chosen = select_sigma(feasible)
    rows = [replace(row, selected=row.sigma == chosen.sigma) for row in rows]
    return chosen.sigma, rows
