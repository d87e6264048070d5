#!/usr/bin/env python3
"""Run all five parameter sweeps (fig3 and fig6 at beta=0.2; fig5, fig7, fig8
at beta=0.1), re-solving the MDP at every point and simulating each policy
with the 400 x 4000 protocol.  Expect a few minutes of runtime.

Set VAOI_THREADS (or pass --threads) to run sweep points concurrently.
"""
import sys
from pathlib import Path

from vaoi.cli import main

CONFIGS = Path(__file__).parent / "configs"

if __name__ == "__main__":
    extra = sys.argv[1:]
    rc = 0
    for name in ("sweeps", "sweeps_lowbeta"):
        rc |= main(["sweep", "--config", str(CONFIGS / f"{name}.json"), *extra])
    sys.exit(rc)
