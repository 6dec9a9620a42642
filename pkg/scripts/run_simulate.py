#!/usr/bin/env python3
"""Simulate replicates of the n=100 symmetric system under the static
priority rule and write per-replicate and pooled cost estimates."""
import sys
from pathlib import Path

from nnetctrl.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "ref1_simulate.ini"

if __name__ == "__main__":
    sys.exit(main(["simulate", "--config", str(CONFIG)] + sys.argv[1:]))
