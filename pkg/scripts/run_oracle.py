#!/usr/bin/env python3
"""Exact long-run averages for the small symmetric systems by relative value
iteration on the truncated chain."""
import sys
from pathlib import Path

from nnetctrl.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "ref1_mdp.ini"

if __name__ == "__main__":
    sys.exit(main(["mdp", "--config", str(CONFIG)] + sys.argv[1:]))
