"""Result table schemas."""

from collections import Counter
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import Field, model_validator

from .base import BaseSchema

InputKind = Literal["org_img", "org_rec", "prt_img", "prt_rec"]
LabelKind = Literal["original", "target"]

INPUT_KINDS: Tuple[InputKind, ...] = ("org_img", "org_rec", "prt_img", "prt_rec")
LABEL_KINDS: Tuple[LabelKind, ...] = ("original", "target")


class MetricSummary(BaseSchema):
    """Top-k accuracy and cosine statistics against one label kind."""

    top1: float = Field(..., ge=0.0, le=1.0)
    top5: float = Field(..., ge=0.0, le=1.0)
    cs_mean: float
    cs_std: float = Field(..., ge=0.0)
    n: int = Field(..., ge=1)

    @model_validator(mode="after")
    def validate_ordering(self) -> "MetricSummary":
        """A Top-1 hit is always a Top-5 hit."""
        if self.top1 > self.top5:
            raise ValueError(f"top1 ({self.top1}) exceeds top5 ({self.top5})")
        return self


class GridRow(BaseSchema):
    """One cell group of the evaluation grid."""

    method: str
    input_kind: InputKind
    label_kind: LabelKind
    summary: MetricSummary

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.method, self.input_kind, self.label_kind)


class Provenance(BaseSchema):
    """Where a report came from."""

    config_hash: str
    seed: int
    versions: Dict[str, str] = Field(default_factory=dict)


class ReportGrid(BaseSchema):
    """Rows keyed by (method, input_kind, label_kind)."""

    rows: List[GridRow] = Field(..., min_length=1)
    provenance: Provenance

    @model_validator(mode="after")
    def validate_complete(self) -> "ReportGrid":
        """Every method carries all input/label kinds; the clean baseline is present."""
        per_method = Counter(row.method for row in self.rows)
        expected = len(INPUT_KINDS) * len(LABEL_KINDS)
        incomplete = sorted(m for m, count in per_method.items() if count != expected)
        if incomplete:
            raise ValueError(f"incomplete grid rows for methods: {', '.join(incomplete)}")
        if len({row.key for row in self.rows}) != len(self.rows):
            raise ValueError("duplicate grid keys")
        if ("none", "org_img", "original") not in {row.key for row in self.rows}:
            raise ValueError("baseline row none/org_img/original is missing")
        return self

    @property
    def methods(self) -> List[str]:
        return sorted({row.method for row in self.rows})

    def get(self, method: str, input_kind: str, label_kind: str) -> MetricSummary:
        for row in self.rows:
            if row.key == (method, input_kind, label_kind):
                return row.summary
        raise KeyError((method, input_kind, label_kind))

    def sorted_rows(self) -> List[GridRow]:
        return sorted(self.rows, key=lambda row: row.key)


class SweepRow(BaseSchema):
    """Consensus metrics for one sanitizer, input kind and sample count."""

    sanitizer: str
    input_kind: Literal["org", "prt"]
    num_samples: int = Field(..., ge=1)
    top1: float
    top5: float
    cs_mean: float
    cs_std: float
    target_top1: float
    n: int


class AttackRecord(BaseSchema):
    """Cost of one attack."""

    sample_id: int
    target_label: int
    loops_used: int = Field(..., ge=1)
    final_cos: float
    success: bool
    defended: bool
    stagnated: bool = False


class AttackCostSummary(BaseSchema):
    """Headline numbers for one arm of the attack-cost experiment."""

    arm: Literal["undefended", "defended"]
    n: int
    success_rate: float
    ci_low: float
    ci_high: float
    median_loops: float
    median_final_cos: float


class HistogramBin(BaseSchema):
    """One bin of a plot-data histogram."""

    figure: str
    arm: str
    bin_lo: float
    bin_hi: float
    count: int


class TransferRow(BaseSchema):
    """Attack crafted on one encoder, evaluated on another."""

    source_encoder: str
    eval_encoder: str
    defended: bool
    attack_success_rate: float
    original_top1: float
    n: int


class EtaRow(BaseSchema):
    """Per-draw persistence estimate against the observed consensus outcome."""

    sanitizer: str
    num_samples: int
    eta_hat: float
    std_error: float
    ci_low: float
    ci_high: float
    trials: int
    predicted_success: float
    observed_success: float
    observed_std_error: float
    within_three_se: bool


class SigmaCalibrationRow(BaseSchema):
    """One candidate of the latent-noise calibration."""

    sigma: float
    clean_top1: float
    eta_hat: float
    selected: bool


class ReportBundle(BaseSchema):
    """All tables one run produced."""

    provenance: Provenance
    grid: Optional[ReportGrid] = None
    baselines: Optional[ReportGrid] = None
    sweep: Optional[List[SweepRow]] = None
    attack_records: Optional[List[AttackRecord]] = None
    attack_summary: Optional[List[AttackCostSummary]] = None
    histograms: Optional[List[HistogramBin]] = None
    transfer: Optional[List[TransferRow]] = None
    eta: Optional[List[EtaRow]] = None
    sigma_calibration: Optional[List[SigmaCalibrationRow]] = None

    def is_empty(self) -> bool:
        tables = (
            self.grid,
            self.baselines,
            self.sweep,
            self.attack_records,
            self.transfer,
            self.eta,
            self.sigma_calibration,
        )
        return all(not table for table in tables)

    def merged(self, other: "ReportBundle") -> "ReportBundle":
        """Tables from ``other`` replace those present in both."""
        update = {
            name: value
            for name, value in other
            if name != "provenance" and value is not None
        }
        return self.model_copy(update=update)
