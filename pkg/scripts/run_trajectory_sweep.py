#!/usr/bin/env python3
"""Next-token training on tokenized logistic-map trajectories."""
import sys
from pathlib import Path

from ceralab.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "trajectory_sweep.json"
sys.exit(main(["sweep", "--config", str(CONFIG), *sys.argv[1:]]))
