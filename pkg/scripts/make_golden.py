"""Regenerate the committed EST golden report used by the acceptance suite.

Run after any intentional change to defaults or report layout:

    python scripts/make_golden.py
"""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from test_acceptance import GOLDEN, golden_report_text  # noqa: E402

if __name__ == "__main__":
    GOLDEN.parent.mkdir(parents=True, exist_ok=True)
    GOLDEN.write_text(golden_report_text())
    print(f"wrote {GOLDEN}")
