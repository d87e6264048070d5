#!/usr/bin/env python3
"""Trace one replication of the optimal and greedy policies on a shared
environment stream; the two CSVs differ only through the chosen actions."""
import sys
from pathlib import Path

from vaoi.cli import main

CONFIGS = Path(__file__).parent / "configs"

if __name__ == "__main__":
    sys.exit(main(["samplepath", "--config", str(CONFIGS / "reference.json"), *sys.argv[1:]]))
