#!/usr/bin/env python3
"""Solve the two reference configurations and machine-check the policy structure.

Writes policy/value tables, per-battery threshold tables, and the structure
report for beta = 0.2 and beta = 0.1.  The threshold tables should show every
threshold rising when energy gets scarcer.
"""
import sys
from pathlib import Path

from vaoi.cli import main

CONFIGS = Path(__file__).parent / "configs"

if __name__ == "__main__":
    rc = 0
    for name in ("reference", "reference_lowbeta"):
        cfg = str(CONFIGS / f"{name}.json")
        print(f"== {name}: solve ==")
        rc |= main(["solve", "--config", cfg])
        print(f"== {name}: check ==")
        rc |= main(["check", "--config", cfg])
    sys.exit(rc)
