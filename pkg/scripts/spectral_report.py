#!/usr/bin/env python3
"""Spectrum report for a stored run: spectral_report.py RUN_ID [--source ...]."""
import sys
from pathlib import Path

from ceralab.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "ceiling_sweep.json"
if len(sys.argv) < 2:
    sys.exit("usage: spectral_report.py RUN_ID [--source latent_H|output_delta_D|delta_w]")
sys.exit(main(["spectral", "--config", str(CONFIG),
               "--run-id", sys.argv[1], *sys.argv[2:]]))
