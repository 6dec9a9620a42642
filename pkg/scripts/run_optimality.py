#!/usr/bin/env python3
"""Full convergence experiment: solve the limiting problem once, simulate the
concatenated field-induced schedules at n = 50..400, compute exact small-n
averages, and tabulate everything against the limiting optimum.

Takes a few hours sequentially; pass --threads 8 to parallelize replicates.
"""
import sys
from pathlib import Path

from nnetctrl.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "ref1_optimality.ini"

if __name__ == "__main__":
    sys.exit(main(["optimality", "--config", str(CONFIG)] + sys.argv[1:]))
