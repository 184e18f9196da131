"""Main entry point: runs the illusion-guard command-line interface."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / "src"))

from illusion_guard.cli.commands import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
