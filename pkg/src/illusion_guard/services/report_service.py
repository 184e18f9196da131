"""Report emission: CSV tables, plot-data CSVs and a JSON summary."""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from ..core.exceptions import ReportError
from ..core.logging import get_logger
from ..schemas.results import HistogramBin, ReportBundle, ReportGrid

logger = get_logger("report_service")

SIGNIFICANT_DIGITS = 6
FLOAT_FORMAT = f"%.{SIGNIFICANT_DIGITS}g"
SUMMARY_FILE = "summary.json"
TIMING_FILE = "timing.json"

GRID_COLUMNS = [
    "method",
    "input_kind",
    "label_kind",
    "top1",
    "top5",
    "cs_mean",
    "cs_std",
    "n",
    "seed",
    "config_hash",
]
SWEEP_COLUMNS = [
    "sanitizer",
    "input_kind",
    "num_samples",
    "top1",
    "top5",
    "cs_mean",
    "cs_std",
    "target_top1",
    "n",
]
ATTACK_RECORD_COLUMNS = [
    "sample_id",
    "target_label",
    "loops_used",
    "final_cos",
    "success",
    "defended",
    "stagnated",
]
ATTACK_SUMMARY_COLUMNS = [
    "arm",
    "n",
    "success_rate",
    "ci_low",
    "ci_high",
    "median_loops",
    "median_final_cos",
]
HISTOGRAM_COLUMNS = ["arm", "bin_lo", "bin_hi", "count"]
TRANSFER_COLUMNS = [
    "source_encoder",
    "eval_encoder",
    "defended",
    "attack_success_rate",
    "original_top1",
    "n",
]
ETA_COLUMNS = [
    "sanitizer",
    "num_samples",
    "eta_hat",
    "std_error",
    "ci_low",
    "ci_high",
    "trials",
    "predicted_success",
    "observed_success",
    "observed_std_error",
    "within_three_se",
]
SIGMA_COLUMNS = ["sigma", "clean_top1", "eta_hat", "selected"]
FIGURES = ("fig3_success_cosine", "fig4_loops", "fig5_final_cosine")


def round_significant(value: Any) -> Any:
    """Round every float in a JSON-like structure to the CSV precision."""
    if isinstance(value, bool):
        return value
    if isinstance(value, float):
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}")
    if isinstance(value, dict):
        return {key: round_significant(item) for key, item in value.items()}
    if isinstance(value, list):
        return [round_significant(item) for item in value]
    return value


def grid_frame(grid: ReportGrid) -> pd.DataFrame:
    rows = [
        {
            "method": row.method,
            "input_kind": row.input_kind,
            "label_kind": row.label_kind,
            **row.summary.model_dump(),
            "seed": grid.provenance.seed,
            "config_hash": grid.provenance.config_hash,
        }
        for row in grid.sorted_rows()
    ]
    return pd.DataFrame(rows, columns=GRID_COLUMNS)


def _frame(rows: Sequence[Any], columns: List[str], sort_by: List[str]) -> pd.DataFrame:
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=columns)
    return frame.sort_values(sort_by, kind="mergesort").reset_index(drop=True)


def _histogram_frame(bins: Sequence[HistogramBin], figure: str) -> pd.DataFrame:
    selected = [b for b in bins if b.figure == figure]
    frame = pd.DataFrame([b.model_dump() for b in selected], columns=["figure", *HISTOGRAM_COLUMNS])
    frame = frame.sort_values(["arm", "bin_lo"], kind="mergesort").reset_index(drop=True)
    return frame[HISTOGRAM_COLUMNS]


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        logger.error(f"Error writing {path}: {e}")
        raise ReportError(f"Failed to write {path}: {e}", {"path": str(path)}) from e
    return path


def _write_json(payload: Dict[str, Any], path: Path) -> Path:
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        logger.error(f"Error writing {path}: {e}")
        raise ReportError(f"Failed to write {path}: {e}", {"path": str(path)}) from e
    return path


def report_frames(bundle: ReportBundle) -> Dict[str, pd.DataFrame]:
    """CSV file name to table, for every table present in the bundle."""
    frames: Dict[str, pd.DataFrame] = {}
    if bundle.grid is not None:
        frames["grid.csv"] = grid_frame(bundle.grid)
    if bundle.baselines is not None:
        frames["baselines.csv"] = grid_frame(bundle.baselines)
    if bundle.sweep:
        frames["fig2_sweep.csv"] = _frame(
            bundle.sweep, SWEEP_COLUMNS, ["sanitizer", "input_kind", "num_samples"]
        )
    if bundle.attack_records:
        frames["attack_records.csv"] = _frame(
            bundle.attack_records, ATTACK_RECORD_COLUMNS, ["defended", "sample_id"]
        )
    if bundle.attack_summary:
        frames["attack_summary.csv"] = _frame(
            bundle.attack_summary, ATTACK_SUMMARY_COLUMNS, ["arm"]
        )
    if bundle.histograms:
        for figure in FIGURES:
            frames[f"{figure}.csv"] = _histogram_frame(bundle.histograms, figure)
    if bundle.transfer:
        frames["transfer.csv"] = _frame(
            bundle.transfer, TRANSFER_COLUMNS, ["source_encoder", "eval_encoder", "defended"]
        )
    if bundle.eta:
        frames["eta.csv"] = _frame(bundle.eta, ETA_COLUMNS, ["sanitizer", "num_samples"])
    if bundle.sigma_calibration:
        frames["sigma_calibration.csv"] = _frame(bundle.sigma_calibration, SIGMA_COLUMNS, ["sigma"])
    return frames


def emit_report(
    bundle: ReportBundle, out_dir: Path, timing: Optional[Dict[str, float]] = None
) -> List[Path]:
    """Write every table of ``bundle`` under ``out_dir`` and return the written paths."""
    if bundle.is_empty():
        raise ReportError("refusing to write an empty report", {"out_dir": str(out_dir)})
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportError(f"Cannot create output directory {out_dir}: {e}") from e

    written = [_write_csv(frame, out_dir / name) for name, frame in report_frames(bundle).items()]
    summary = round_significant(bundle.model_dump(mode="json", exclude_none=True))
    written.append(_write_json(summary, out_dir / SUMMARY_FILE))
    if timing is not None:
        rounded = {stage: round(seconds, 4) for stage, seconds in sorted(timing.items())}
        written.append(_write_json(rounded, out_dir / TIMING_FILE))
    logger.info(f"Wrote {len(written)} report files to {out_dir}")
    return written


def load_report(out_dir: Path) -> ReportBundle:
    """Read back the JSON summary of a previous run."""
    path = Path(out_dir) / SUMMARY_FILE
    try:
        payload = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ReportError(f"Failed to read {path}: {e}", {"path": str(path)}) from e
    try:
        return ReportBundle.model_validate_json(payload)
    except ValueError as e:
        raise ReportError(f"Invalid report summary {path}: {e}", {"path": str(path)}) from e
