#!/usr/bin/env python3
"""Rank sweep on the nonlinear-teacher task: the linear-ceiling experiment.

Extra CLI flags pass through, e.g. --jobs 4 or --out /tmp/sweep.
"""
import sys
from pathlib import Path

from ceralab.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "ceiling_sweep.json"
sys.exit(main(["sweep", "--config", str(CONFIG), *sys.argv[1:]]))
