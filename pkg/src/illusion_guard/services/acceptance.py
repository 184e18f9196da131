"""Directional acceptance checks over the tables of a finished run.

A check whose input table is missing reports ``passed=None`` rather than
failing, so partial runs can still be inspected.
"""

from typing import Callable, Dict, List, Optional, Tuple

from ..core.logging import get_logger
from ..schemas.base import BaseSchema
from ..schemas.results import ReportBundle, ReportGrid, SweepRow

logger = get_logger("acceptance")

UNDEFENDED_MIN_SUCCESS = 0.95
DEFENDED_MAX_SUCCESS = 0.10
CONSENSUS_MAX_TARGET_TOP1 = 0.05
UNDEFENDED_MIN_TARGET_TOP1 = 0.5
CLEAN_MAX_DROP = 0.02
PLATEAU_TOLERANCE = 0.05
# headline defense arm; the latent-noise VAE is the calibrated one
DEFENSE = "dm"
CALIBRATED = "vae"


class AcceptanceCheck(BaseSchema):
    criterion: int
    name: str
    passed: Optional[bool]
    detail: str


CheckResult = Tuple[Optional[bool], str]


def _undefended_efficacy(bundle: ReportBundle) -> CheckResult:
    arms = {s.arm: s for s in bundle.attack_summary or []}
    if "undefended" not in arms:
        return None, "attack-cost experiment not run"
    arm = arms["undefended"]
    passed = arm.success_rate >= UNDEFENDED_MIN_SUCCESS
    return passed, f"success={arm.success_rate:.3f}, median loops={arm.median_loops:g}"


def _sampling_target_top1(grid: ReportGrid) -> str:
    return ", ".join(
        f"{method} {grid.get(method, 'prt_img', 'target').top1:.3f}"
        for method in grid.methods
        if method.endswith("+sampling")
    )


def _defense_efficacy(bundle: ReportBundle) -> CheckResult:
    grid = bundle.grid
    if grid is None or f"{DEFENSE}+sampling" not in grid.methods:
        return None, f"grid with {DEFENSE}+sampling not run"
    defended = grid.get(f"{DEFENSE}+sampling", "prt_img", "target").top1
    undefended = grid.get("none", "prt_rec", "target").top1
    passed = defended <= CONSENSUS_MAX_TARGET_TOP1 and undefended >= UNDEFENDED_MIN_TARGET_TOP1
    return passed, (
        f"consensus target top1 ({_sampling_target_top1(grid)}), "
        f"undefended target top1={undefended:.3f}"
    )


def _clean_retention(bundle: ReportBundle) -> CheckResult:
    grid = bundle.grid
    method = f"{CALIBRATED}+sampling"
    if grid is None or method not in grid.methods or "ae" not in grid.methods:
        return None, f"grid with ae and {method} not run"
    consensus = grid.get(method, "org_img", "original").top1
    reference = grid.get("ae", "org_img", "original").top1
    passed = consensus >= reference - CLEAN_MAX_DROP
    return passed, f"{method} clean top1={consensus:.3f}, ae clean top1={reference:.3f}"


def _adaptive_cost(bundle: ReportBundle) -> CheckResult:
    arms = {s.arm: s for s in bundle.attack_summary or []}
    if not bundle.attack_records or "defended" not in arms or "undefended" not in arms:
        return None, "attack-cost experiment not run"
    budget = max(r.loops_used for r in bundle.attack_records)
    failures = [r for r in bundle.attack_records if r.defended and not r.success]
    charged = all(r.loops_used == budget for r in failures)
    defended, undefended = arms["defended"], arms["undefended"]
    passed = (
        defended.success_rate <= DEFENDED_MAX_SUCCESS
        and charged
        and defended.median_final_cos < undefended.median_final_cos
    )
    return passed, (
        f"defended success={defended.success_rate:.3f}, failures charged full budget={charged}, "
        f"median final cos {defended.median_final_cos:.3f} vs {undefended.median_final_cos:.3f}"
    )


def _sweep_shape(bundle: ReportBundle) -> CheckResult:
    rows: Dict[int, SweepRow] = {
        r.num_samples: r
        for r in bundle.sweep or []
        if r.sanitizer == DEFENSE and r.input_kind == "prt"
    }
    if not {1, 10, 20} <= rows.keys():
        return None, "sweep over N in {1, 10, 20} not run"
    rising = rows[10].top1 >= rows[1].top1
    plateau = abs(rows[20].top1 - rows[10].top1) <= PLATEAU_TOLERANCE
    return rising and plateau, (
        f"top1 at N=1/10/20: {rows[1].top1:.3f}/{rows[10].top1:.3f}/{rows[20].top1:.3f}"
    )


def _eta_consistency(bundle: ReportBundle) -> CheckResult:
    odd = [r for r in bundle.eta or [] if r.num_samples % 2 == 1]
    if not odd:
        return None, "no odd-N eta rows"
    passed = all(r.within_three_se for r in odd)
    detail = ", ".join(
        f"{r.sanitizer} N={r.num_samples}: predicted {r.predicted_success:.3f} "
        f"observed {r.observed_success:.3f}"
        for r in odd
    )
    return passed, detail


CHECKS: List[Tuple[int, str, Callable[[ReportBundle], CheckResult]]] = [
    (5, "undefended attack efficacy", _undefended_efficacy),
    (6, "defense efficacy", _defense_efficacy),
    (7, "clean-utility retention", _clean_retention),
    (8, "adaptive attack cost", _adaptive_cost),
    (9, "sweep shape", _sweep_shape),
    (11, "eta consistency", _eta_consistency),
]


def evaluate_acceptance(bundle: ReportBundle) -> List[AcceptanceCheck]:
    results = []
    for criterion, name, check in CHECKS:
        passed, detail = check(bundle)
        results.append(
            AcceptanceCheck(criterion=criterion, name=name, passed=passed, detail=detail)
        )
        status = "skipped" if passed is None else ("pass" if passed else "FAIL")
        logger.info(f"[{criterion}] {name}: {status} ({detail})")
    return results
