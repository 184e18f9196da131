#!/usr/bin/env python3
"""Print the directional acceptance checks for a finished run."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from illusion_guard.core.exceptions import ReportError  # noqa: E402
from illusion_guard.services.acceptance import evaluate_acceptance  # noqa: E402
from illusion_guard.services.report_service import load_report  # noqa: E402

STATUS = {None: "⏭️  skipped", True: "✅ pass", False: "❌ FAIL"}


def main() -> int:
    """Evaluate acceptance criteria over ``<out_dir>/summary.json``."""
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", type=Path, nargs="?", default=Path("results"))
    args = parser.parse_args()

    print(f"🔍 Checking run in {args.out_dir}")
    try:
        bundle = load_report(args.out_dir)
    except ReportError as e:
        print(f"❌ {e.message}")
        return 3

    results = evaluate_acceptance(bundle)
    for result in results:
        print(f"{STATUS[result.passed]:<12} [{result.criterion:>2}] {result.name}")
        print(f"               {result.detail}")

    failed = [r for r in results if r.passed is False]
    if failed:
        print(f"\n{len(failed)} criterion(s) failed")
        return 1
    print("\n🎉 No failing criteria")
    return 0


if __name__ == "__main__":
    sys.exit(main())
