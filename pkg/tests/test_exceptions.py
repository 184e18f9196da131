"""Tests for core exceptions"""

import pytest

from illusion_guard.core.exceptions import (
    ArtifactError,
    ConfigurationError,
    ConsensusError,
    ExperimentError,
    IllusionGuardError,
    NumericFailureError,
    RankDeficiencyError,
    ReportError,
)


class TestIllusionGuardError:
    """Test the base exception"""

    def test_message_and_details(self):
        """Test that message and details are kept"""
        error = ConfigurationError("bad value", {"field": "attack -> linf_budget"})
        assert str(error) == "bad value"
        assert error.message == "bad value"
        assert error.details == {"field": "attack -> linf_budget"}

    def test_details_default_to_empty(self):
        """Test an error without details"""
        assert NumericFailureError("nan").details == {}

    @pytest.mark.parametrize(
        "klass",
        [ConfigurationError, NumericFailureError, ConsensusError, ArtifactError, ReportError],
    )
    def test_inheritance(self, klass):
        """Test that every testbed error derives from the base class"""
        assert issubclass(klass, IllusionGuardError)


class TestRankDeficiencyError:
    """Test RankDeficiencyError"""

    def test_rank_context(self):
        """Test that rank and expected rank are reported"""
        error = RankDeficiencyError("encoder fit", 3, 4)
        assert str(error) == "encoder fit: normal matrix is rank deficient (rank 3 < 4)"
        assert error.rank == 3
        assert error.expected == 4
        assert error.details == {"what": "encoder fit", "rank": 3, "expected": 4}


class TestExperimentError:
    """Test ExperimentError"""

    def test_sample_context(self):
        """Test that the sample id joins the details"""
        error = ExperimentError("failed", sample_id=7, stage="pgd_illusion")
        assert error.sample_id == 7
        assert error.details == {"stage": "pgd_illusion", "sample_id": 7}

    def test_without_sample(self):
        """Test an error not tied to a sample"""
        error = ExperimentError("failed")
        assert error.sample_id is None
        assert error.details == {}
