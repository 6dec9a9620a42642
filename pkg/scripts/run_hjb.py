#!/usr/bin/env python3
"""Solve the unconstrained limiting problem on the symmetric instance and
write the value, control field, and solve report."""
import sys
from pathlib import Path

from nnetctrl.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "ref1_hjb.ini"

if __name__ == "__main__":
    sys.exit(main(["hjb", "--config", str(CONFIG)] + sys.argv[1:]))
