#!/usr/bin/env python3
"""Solve the fairness-constrained problem on the asymmetric instance."""
import sys
from pathlib import Path

from nnetctrl.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "ref2_fairness.ini"

if __name__ == "__main__":
    sys.exit(main(["hjb", "--config", str(CONFIG)] + sys.argv[1:]))
