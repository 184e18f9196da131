"""Cosine similarity, Top-k hits and per-record metric summaries."""

from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from ..core.exceptions import EmptySummaryError, UndefinedScoreError
from ..schemas.results import MetricSummary
from .encoder import ScoreVector

TOP5 = 5


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two nonzero vectors, clamped to [-1, 1]."""
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0 or norm_b == 0:
        raise UndefinedScoreError("cosine similarity is undefined for a zero vector")
    return float(np.clip(float(a @ b) / (norm_a * norm_b), -1.0, 1.0))


def topk_hit(scores: ScoreVector, y: int, k: int) -> bool:
    """Whether ``y`` is among the ``k`` best-ranked classes."""
    if not 1 <= k <= scores.scores.shape[0]:
        raise ValueError(f"k={k} must lie in [1, {scores.scores.shape[0]}]")
    return bool(np.any(scores.ranking[:k] == y))


@dataclass(frozen=True)
class PredictionRecord:
    """Scores for one evaluated input with the labels it is judged against."""

    sample_id: int
    original_label: int
    target_label: int
    scores: ScoreVector

    def label(self, label_kind: Literal["original", "target"]) -> int:
        return self.original_label if label_kind == "original" else self.target_label


def summarize(
    records: Iterable[PredictionRecord], label_kind: Literal["original", "target"]
) -> MetricSummary:
    """Top-1/Top-5 fractions and cosine mean/std against the chosen label."""
    ordered = sorted(records, key=lambda record: record.sample_id)
    if not ordered:
        raise EmptySummaryError(f"no records to summarize against the {label_kind} label")
    k5 = min(TOP5, ordered[0].scores.scores.shape[0])
    top1 = np.array([topk_hit(r.scores, r.label(label_kind), 1) for r in ordered], dtype=float)
    top5 = np.array([topk_hit(r.scores, r.label(label_kind), k5) for r in ordered], dtype=float)
    cosines = np.array([r.scores[r.label(label_kind)] for r in ordered])
    return MetricSummary(
        top1=float(np.mean(top1)),
        top5=float(np.mean(top5)),
        cs_mean=float(np.mean(cosines)),
        cs_std=float(np.std(cosines)),
        n=len(ordered),
    )
