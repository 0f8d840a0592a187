"""Rewrite the frozen reference outputs in tests/golden.

Run only after an intentional change to numerics; review the diff.
"""
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from golden_cases import all_cases  # noqa: E402


def main():
    out = ROOT / "tests" / "golden"
    out.mkdir(exist_ok=True)
    for name, value in all_cases().items():
        (out / name).write_text(json.dumps(value, indent=2, sort_keys=True) + "\n")
        print("wrote", out / name)


if __name__ == "__main__":
    main()
