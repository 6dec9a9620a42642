#!/usr/bin/env python3
"""Check the drift inequalities for the symmetric instance: the n=100 chain
under the priority rule and the limiting diffusion under the same rule."""
import sys
from pathlib import Path

from nnetctrl.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "ref1_verify.ini"

if __name__ == "__main__":
    sys.exit(main(["verify", "--config", str(CONFIG)] + sys.argv[1:]))
