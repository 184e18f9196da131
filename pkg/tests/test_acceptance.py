"""Tests for the directional acceptance checks"""

from pathlib import Path

import pytest

from illusion_guard.schemas.results import (
    INPUT_KINDS,
    LABEL_KINDS,
    AttackCostSummary,
    AttackRecord,
    EtaRow,
    GridRow,
    MetricSummary,
    Provenance,
    ReportBundle,
    ReportGrid,
    SweepRow,
)
from illusion_guard.services.acceptance import evaluate_acceptance
from illusion_guard.services.config_service import load_config
from illusion_guard.services.experiment_service import ExperimentService

PROVENANCE = Provenance(config_hash="0" * 16, seed=0)


def _grid(top1: dict) -> ReportGrid:
    """Grid whose Top-1 comes from ``top1`` keyed by cell, 0.5 elsewhere."""
    methods = sorted({"none", *(key[0] for key in top1)})
    rows = []
    for method in methods:
        for input_kind in INPUT_KINDS:
            for label_kind in LABEL_KINDS:
                value = top1.get((method, input_kind, label_kind), 0.5)
                summary = MetricSummary(top1=value, top5=1.0, cs_mean=0.5, cs_std=0.1, n=10)
                rows.append(
                    GridRow(
                        method=method,
                        input_kind=input_kind,
                        label_kind=label_kind,
                        summary=summary,
                    )
                )
    return ReportGrid(rows=rows, provenance=PROVENANCE)


def _summary(arm: str, success_rate: float, median_final_cos: float) -> AttackCostSummary:
    return AttackCostSummary(
        arm=arm,
        n=2,
        success_rate=success_rate,
        ci_low=0.0,
        ci_high=1.0,
        median_loops=10.0,
        median_final_cos=median_final_cos,
    )


def _record(sample_id: int, loops: int, success: bool, defended: bool) -> AttackRecord:
    return AttackRecord(
        sample_id=sample_id,
        target_label=0,
        loops_used=loops,
        final_cos=0.9 if success else 0.2,
        success=success,
        defended=defended,
    )


def _sweep_row(num_samples: int, top1: float, sanitizer: str = "dm") -> SweepRow:
    return SweepRow(
        sanitizer=sanitizer,
        input_kind="prt",
        num_samples=num_samples,
        top1=top1,
        top5=1.0,
        cs_mean=0.5,
        cs_std=0.1,
        target_top1=0.0,
        n=10,
    )


def _eta_row(num_samples: int, within: bool) -> EtaRow:
    return EtaRow(
        sanitizer="vae",
        num_samples=num_samples,
        eta_hat=0.1,
        std_error=0.01,
        ci_low=0.08,
        ci_high=0.12,
        trials=100,
        predicted_success=0.01,
        observed_success=0.01 if within else 0.5,
        observed_std_error=0.01,
        within_three_se=within,
    )


def _results(bundle: ReportBundle) -> dict:
    return {check.criterion: check.passed for check in evaluate_acceptance(bundle)}


class TestAcceptance:
    """Test acceptance evaluation"""

    def test_missing_tables_are_skipped(self):
        """Test that every check is skipped on a bundle without tables"""
        results = _results(ReportBundle(provenance=PROVENANCE))
        assert results == {5: None, 6: None, 7: None, 8: None, 9: None, 11: None}

    def test_defense_and_clean_retention(self):
        """Test passing grid checks"""
        grid = _grid(
            {
                ("dm+sampling", "prt_img", "target"): 0.0,
                ("vae+sampling", "prt_img", "target"): 0.7,
                ("none", "prt_rec", "target"): 0.9,
                ("vae+sampling", "org_img", "original"): 0.95,
                ("ae", "org_img", "original"): 0.96,
            }
        )
        results = _results(ReportBundle(provenance=PROVENANCE, grid=grid))
        assert results[6] is True
        assert results[7] is True

    def test_defense_fails_when_illusion_survives(self):
        """Test a consensus that still reaches the target"""
        grid = _grid(
            {
                ("dm+sampling", "prt_img", "target"): 0.4,
                ("vae+sampling", "prt_img", "target"): 0.0,
                ("none", "prt_rec", "target"): 0.9,
                ("ae", "org_img", "original"): 0.9,
            }
        )
        results = _results(ReportBundle(provenance=PROVENANCE, grid=grid))
        assert results[6] is False
        assert results[7] is False

    def test_attack_cost_checks(self):
        """Test undefended efficacy and the adaptive cost with charged failures"""
        bundle = ReportBundle(
            provenance=PROVENANCE,
            attack_records=[
                _record(0, 3, True, False),
                _record(1, 5, True, False),
                _record(0, 40, False, True),
                _record(1, 40, False, True),
            ],
            attack_summary=[_summary("undefended", 1.0, 0.9), _summary("defended", 0.0, 0.2)],
        )
        results = _results(bundle)
        assert results[5] is True
        assert results[8] is True

    def test_uncharged_failure(self):
        """Test that a defended failure below the budget fails the cost check"""
        bundle = ReportBundle(
            provenance=PROVENANCE,
            attack_records=[_record(0, 40, True, False), _record(0, 12, False, True)],
            attack_summary=[_summary("undefended", 1.0, 0.9), _summary("defended", 0.0, 0.2)],
        )
        assert _results(bundle)[8] is False

    def test_sweep_shape(self):
        """Test rising then flat consensus accuracy"""
        rising = [_sweep_row(1, 0.2), _sweep_row(10, 0.9), _sweep_row(20, 0.92)]
        assert _results(ReportBundle(provenance=PROVENANCE, sweep=rising))[9] is True
        falling = [_sweep_row(1, 0.9), _sweep_row(10, 0.5), _sweep_row(20, 0.5)]
        assert _results(ReportBundle(provenance=PROVENANCE, sweep=falling))[9] is False

    def test_sweep_needs_all_counts(self):
        """Test that a sweep without N = 20 is skipped"""
        rows = [_sweep_row(1, 0.2), _sweep_row(10, 0.9)]
        assert _results(ReportBundle(provenance=PROVENANCE, sweep=rows))[9] is None

    def test_eta_consistency_uses_odd_counts(self):
        """Test that only odd sample counts are judged"""
        rows = [_eta_row(10, False), _eta_row(11, True)]
        assert _results(ReportBundle(provenance=PROVENANCE, eta=rows))[11] is True
        rows = [_eta_row(11, False)]
        assert _results(ReportBundle(provenance=PROVENANCE, eta=rows))[11] is False

    def test_defense_detail_lists_every_sampling_method(self):
        """Test that the surviving VAE illusion is reported next to the headline arm"""
        grid = _grid(
            {
                ("dm+sampling", "prt_img", "target"): 0.0,
                ("vae+sampling", "prt_img", "target"): 0.73,
                ("none", "prt_rec", "target"): 0.96,
            }
        )
        bundle = ReportBundle(provenance=PROVENANCE, grid=grid)
        checks = {check.criterion: check for check in evaluate_acceptance(bundle)}
        assert checks[6].passed is True
        assert "dm+sampling 0.000" in checks[6].detail
        assert "vae+sampling 0.730" in checks[6].detail

    def test_sweep_shape_reads_the_headline_arm(self):
        """Test that only the diffusion rows decide the sweep check"""
        rows = [_sweep_row(n, 0.2, "vae") for n in (1, 10, 20)]
        assert _results(ReportBundle(provenance=PROVENANCE, sweep=rows))[9] is None
        rows += [_sweep_row(1, 0.5), _sweep_row(10, 0.9), _sweep_row(20, 0.9)]
        assert _results(ReportBundle(provenance=PROVENANCE, sweep=rows))[9] is True


@pytest.mark.slow
@pytest.mark.integration
class TestDeskRun:
    """Test the defense check on the desk-scale configuration"""

    def test_diffusion_consensus_removes_the_illusion(self):
        """Test criterion 6 on dm+sampling and the weaker latent-noise arm"""
        cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "desk.yaml")
        bundle = ExperimentService(cfg).run(["grid", "sweep"])
        results = _results(bundle)
        assert results[6] is True
        assert results[9] is not None
        assert results[11] is not None
        grid = bundle.grid
        dm = grid.get("dm+sampling", "prt_img", "target").top1
        vae = grid.get("vae+sampling", "prt_img", "target").top1
        assert dm <= 0.05
        assert vae > dm
